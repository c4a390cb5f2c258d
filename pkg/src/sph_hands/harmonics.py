"""Associated Legendre functions, complex spherical harmonics and the local
harmonic embeddings (LSHR: per-neighbour basis values, LSHT: per-centre
coefficients) built on top of them.

Conventions: P_l^m carries the Condon-Shortley factor (-1)^m, and negative
orders follow Y_l^{-m} = (-1)^m conj(Y_l^m).
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import Iterable, Sequence, Tuple

import numpy as np

from .geometry import LocalSphericalField

LMAX = 8
DEFAULT_DEGREES = (1, 2)

FORMATS = ("real", "imaginary", "magnitude", "phase", "real_and_imag", "mag_and_phase")
FORMAT_ALIASES = {
    "mag": "magnitude",
    "imag": "imaginary",
    "real-imag": "real_and_imag",
    "mag-phase": "mag_and_phase",
}
FORMAT_PARTS = {
    "real": ("re",),
    "imaginary": ("im",),
    "magnitude": ("mag",),
    "phase": ("phase",),
    "real_and_imag": ("re", "im"),
    "mag_and_phase": ("mag", "phase"),
}


def _check_degree(ell: int, m: int) -> None:
    if ell < 0 or ell > LMAX:
        raise ValueError(f"degree {ell} outside [0, {LMAX}]")
    if abs(m) > ell:
        raise ValueError(f"order {m} outside [-{ell}, {ell}]")


def assoc_legendre(ell: int, m: int, x):
    """P_l^m(x) for 0 <= m <= l, by upward recurrence in l from P_m^m.

    P_m^m     = (-1)^m (2m-1)!! (1-x^2)^{m/2}
    P_{m+1}^m = x (2m+1) P_m^m
    P_l^m     = (x (2l-1) P_{l-1}^m - (l+m-1) P_{l-2}^m) / (l-m)
    """
    if m < 0 or m > ell:
        raise ValueError(f"need 0 <= m <= l, got l={ell}, m={m}")
    _check_degree(ell, m)
    xa = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(xa) > 1.0) or not np.all(np.isfinite(xa)):
        raise ValueError("x must lie in [-1, 1]")
    somx2 = np.sqrt((1.0 - xa) * (1.0 + xa))
    pmm = np.ones_like(xa)
    fact = 1.0
    for _ in range(m):
        pmm = -pmm * fact * somx2
        fact += 2.0
    if ell == m:
        out = pmm
    else:
        pmm1 = xa * (2 * m + 1) * pmm
        if ell == m + 1:
            out = pmm1
        else:
            for ll in range(m + 2, ell + 1):
                pll = (xa * (2 * ll - 1) * pmm1 - (ll + m - 1) * pmm) / (ll - m)
                pmm, pmm1 = pmm1, pll
            out = pmm1
    return float(out) if np.ndim(out) == 0 else out


def assoc_legendre_closed(ell: int, m: int, x):
    """Closed forms for l <= 2 (independent cross-check of the recurrence)."""
    x = np.asarray(x, dtype=np.float64)
    s = np.sqrt(1.0 - x * x)
    table = {
        (0, 0): lambda: np.ones_like(x),
        (1, 0): lambda: x,
        (1, 1): lambda: -s,
        (2, 0): lambda: 0.5 * (3.0 * x * x - 1.0),
        (2, 1): lambda: -3.0 * x * s,
        (2, 2): lambda: 3.0 * (1.0 - x * x),
    }
    try:
        return table[(ell, m)]()
    except KeyError:
        raise ValueError(f"no closed form for l={ell}, m={m}") from None


def _norm(ell: int, m: int) -> float:
    return np.sqrt(factorial(ell - m) * (2 * ell + 1) / (factorial(ell + m) * 4.0 * np.pi))


def sph_harm(ell: int, m: int, theta, phi, check: bool = True):
    """Complex Y_l^m(theta, phi); theta is the polar angle, phi the azimuth.

    Accepts scalars or broadcastable arrays.
    """
    _check_degree(ell, m)
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    if check:
        if np.any(theta < 0.0) or np.any(theta > np.pi):
            raise ValueError("theta must lie in [0, pi]")
        if np.any(phi < 0.0) or np.any(phi >= 2.0 * np.pi):
            raise ValueError("phi must lie in [0, 2*pi)")
    am = abs(m)
    base = _norm(ell, am) * assoc_legendre(ell, am, np.cos(theta)) * np.exp(1j * am * phi)
    if m < 0:
        base = (-1) ** am * np.conj(base)
    return complex(base) if np.ndim(base) == 0 else base


def harmonic_indices(degrees: Iterable[int] = DEFAULT_DEGREES) -> Tuple[Tuple[int, int], ...]:
    """(l, m) pairs in canonical order: ascending l, then m from -l to l."""
    degrees = sorted(set(int(d) for d in degrees))
    if not degrees:
        raise ValueError("degree set is empty")
    for ell in degrees:
        _check_degree(ell, 0)
    return tuple((ell, m) for ell in degrees for m in range(-ell, ell + 1))


def sph_harm_stack(degrees: Sequence[int], theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """All Y_l^m for the degree set, stacked on a new last axis."""
    idx = harmonic_indices(degrees)
    return np.stack([sph_harm(ell, m, theta, phi, check=False) for ell, m in idx], axis=-1)


@dataclass(frozen=True)
class HarmonicCoefficients:
    """Complex values on a trailing (l, m) axis.

    For ``kind == "lshr"`` values have shape (T, M, |S|, |S|, K) (centre,
    neighbour, harmonic); for ``"lsht"`` shape (T, M, |S|, K).
    """

    values: np.ndarray
    degrees: tuple
    kind: str
    subset: tuple = ()

    @property
    def indices(self) -> Tuple[Tuple[int, int], ...]:
        return harmonic_indices(self.degrees)


def lshr_embed(field: LocalSphericalField, degrees: Sequence[int] = DEFAULT_DEGREES
               ) -> HarmonicCoefficients:
    """Y_l^m at each (centre, neighbour) direction; self-pairs are exact zeros."""
    values = sph_harm_stack(degrees, field.theta, field.phi)
    n = len(field.subset)
    diag = np.eye(n, dtype=bool)[..., None]
    values = np.where(diag, 0.0 + 0.0j, values)
    return HarmonicCoefficients(values, tuple(sorted(set(degrees))), "lshr", field.subset)


def lsht_transform(field: LocalSphericalField, degrees: Sequence[int] = DEFAULT_DEGREES,
                   normalize: bool = False) -> HarmonicCoefficients:
    """a_l^m(t, v) = sum_{w != v} r_vw * conj(Y_l^m(theta_vw, phi_vw)).

    The neighbourhood is treated as radius-weighted point masses on the
    sphere. With ``normalize`` the sum is divided by the neighbour count.
    """
    ys = sph_harm_stack(degrees, field.theta, field.phi)
    n = len(field.subset)
    weights = np.where(np.eye(n, dtype=bool), 0.0, field.r)
    coeffs = np.einsum("...vw,...vwk->...vk", weights, np.conj(ys))
    if normalize:
        coeffs = coeffs / (n - 1)
    return HarmonicCoefficients(coeffs, tuple(sorted(set(degrees))), "lsht", field.subset)


def canonical_format(fmt: str) -> str:
    fmt = FORMAT_ALIASES.get(fmt, fmt)
    if fmt not in FORMATS:
        raise ValueError(f"unknown complex format {fmt!r}; choose from {FORMATS}")
    return fmt


def _phase(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    ph = np.arctan2(im, re)
    # arctan2(-0.0, x<0) gives -pi; the range is (-pi, pi]
    ph = np.where(ph == -np.pi, np.pi, ph)
    return np.where((re == 0.0) & (im == 0.0), 0.0, ph)


def complex_format(values, fmt: str) -> np.ndarray:
    """Real-valued view of complex values.

    Paired formats concatenate along the last axis: an input with n values on
    its last axis yields 2n, first parts first (real before imaginary,
    magnitude before phase).
    """
    if isinstance(values, HarmonicCoefficients):
        values = values.values
    z = np.atleast_1d(np.asarray(values, dtype=np.complex128))
    fmt = canonical_format(fmt)
    re, im = z.real, z.imag
    parts = {
        "re": lambda: re,
        "im": lambda: im,
        "mag": lambda: np.sqrt(re * re + im * im),
        "phase": lambda: _phase(re, im),
    }
    return np.concatenate([parts[p]() for p in FORMAT_PARTS[fmt]], axis=-1)


def power_spectrum(coeffs: HarmonicCoefficients) -> np.ndarray:
    """Per-degree energy sum_m |a_l^m|^2, ordered like ``coeffs.degrees``."""
    idx = coeffs.indices
    power = np.abs(coeffs.values) ** 2
    out = []
    for ell in coeffs.degrees:
        cols = [k for k, (l2, _) in enumerate(idx) if l2 == ell]
        out.append(power[..., cols].sum(axis=-1))
    return np.stack(out, axis=-1)


def channel_multiplier(fmt: str) -> int:
    return len(FORMAT_PARTS[canonical_format(fmt)])
