"""Local spherical neighbourhoods and rigid rotations."""
from __future__ import annotations

from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .skeleton_io import SkeletonSequence

AXES = {"x": 0, "y": 1, "z": 2}
TWO_PI = 2.0 * np.pi

# Cyclic permutations keep handedness, so a right-handed rotation about the
# up axis is a +alpha shift in azimuth.
_PERMUTATIONS = {"x": (1, 2, 0), "y": (2, 0, 1), "z": (0, 1, 2)}


class SphericalPoint(NamedTuple):
    r: float
    theta: float
    phi: float


class LocalSphericalField(NamedTuple):
    """Per (t, m, center, neighbour) spherical coordinates over a joint subset.

    Arrays ``r``, ``theta``, ``phi`` have shape (T, M, |S|, |S|); ``subset``
    lists the joint ids backing the last two axes.
    """

    r: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    subset: tuple
    up_axis: str


def _check_axis(up_axis: str) -> str:
    if up_axis not in AXES:
        raise ValueError(f"up_axis must be one of x, y, z; got {up_axis!r}")
    return up_axis


def permute_to_polar(xyz: np.ndarray, up_axis: str = "y") -> np.ndarray:
    """Reorder the last axis so that ``up_axis`` plays the role of z."""
    return np.asarray(xyz)[..., list(_PERMUTATIONS[_check_axis(up_axis)])]


def spherical_arrays(xyz: np.ndarray, up_axis: str = "z"):
    """Vectorised cart_to_spherical over the last axis. Returns (r, theta, phi)."""
    p = permute_to_polar(np.asarray(xyz, dtype=np.float64), up_axis)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    rho = np.hypot(x, y)
    r = np.sqrt(x * x + y * y + z * z)
    theta = np.arctan2(rho, z)
    phi = np.arctan2(y, x)
    phi = np.where(phi < 0.0, phi + TWO_PI, phi)
    # -0.0 or rounding can land exactly on 2*pi
    phi = np.where(phi >= TWO_PI, phi - TWO_PI, phi)
    degenerate = r == 0.0
    theta = np.where(degenerate, 0.0, theta)
    phi = np.where(degenerate, 0.0, phi)
    return r, theta, phi


def cart_to_spherical(x: float, y: float, z: float, up_axis: str = "z") -> SphericalPoint:
    r, theta, phi = spherical_arrays(np.array([x, y, z], dtype=np.float64), up_axis)
    return SphericalPoint(float(r), float(theta), float(phi))


def _resolve_subset(subset: Optional[Sequence[int]], n_joints: int) -> tuple:
    if subset is None:
        subset = range(n_joints)
    ids = tuple(int(j) for j in subset)
    if len(ids) < 2:
        raise ValueError("joint subset needs at least 2 joints")
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate joint ids in subset {ids}")
    bad = [j for j in ids if not 0 <= j < n_joints]
    if bad:
        raise ValueError(f"joint ids {bad} out of range for {n_joints} joints")
    return ids


def to_local(seq: Union[SkeletonSequence, np.ndarray], subset: Optional[Sequence[int]] = None,
             up_axis: str = "y") -> LocalSphericalField:
    """Express every joint of ``subset`` relative to every other joint of ``subset``.

    Entry (t, m, i, j) holds the spherical coordinates of
    ``coords[t, m, subset[j]] - coords[t, m, subset[i]]``; the diagonal is (0, 0, 0).
    """
    coords = seq.coords if isinstance(seq, SkeletonSequence) else np.asarray(seq, dtype=np.float64)
    ids = _resolve_subset(subset, coords.shape[-2])
    pts = coords[..., ids, :]
    rel = pts[..., None, :, :] - pts[..., :, None, :]
    r, theta, phi = spherical_arrays(rel, up_axis)
    diag = np.eye(len(ids), dtype=bool)
    r = np.where(diag, 0.0, r)
    theta = np.where(diag, 0.0, theta)
    phi = np.where(diag, 0.0, phi)
    return LocalSphericalField(r, theta, phi, ids, up_axis)


def axis_rotation(angle: float, axis: str = "y") -> np.ndarray:
    """Right-handed rotation matrix by ``angle`` radians about a coordinate axis."""
    c, s = np.cos(angle), np.sin(angle)
    i = AXES[_check_axis(axis)]
    j, k = (i + 1) % 3, (i + 2) % 3
    R = np.eye(3)
    R[j, j] = c
    R[j, k] = -s
    R[k, j] = s
    R[k, k] = c
    return R


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def uniform_quaternion(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform unit quaternion (w, x, y, z) from three uniforms (Shoemake)."""
    u1, u2, u3 = rng.random(3)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    t1, t2 = TWO_PI * u2, TWO_PI * u3
    return np.array([b * np.cos(t2), a * np.sin(t1), a * np.cos(t1), b * np.sin(t2)])


def sample_rotation(rng: np.random.Generator, mode: str = "so3_uniform",
                    up_axis: str = "y") -> np.ndarray:
    """Draw a rotation matrix.

    ``about_up_axis`` rotates by an angle uniform in [0, 2*pi) about ``up_axis``;
    ``so3_uniform`` is Haar-distributed over SO(3).
    """
    if mode == "about_up_axis":
        return axis_rotation(TWO_PI * rng.random(), up_axis)
    if mode == "so3_uniform":
        return quaternion_to_matrix(uniform_quaternion(rng))
    if mode == "none":
        return np.eye(3)
    raise ValueError(f"unknown rotation mode {mode!r}")


def check_rotation(R: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {R.shape}")
    if np.abs(R.T @ R - np.eye(3)).max() > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("matrix is not a proper rotation")
    return R


def rotate(seq: SkeletonSequence, R: np.ndarray) -> SkeletonSequence:
    """Apply ``R`` to every joint coordinate (p -> R p)."""
    R = np.asarray(R, dtype=np.float64)
    return seq.with_coords(seq.coords @ R.T)
