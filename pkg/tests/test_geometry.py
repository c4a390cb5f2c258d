import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sph_hands.geometry import (
    axis_rotation,
    cart_to_spherical,
    check_rotation,
    rotate,
    sample_rotation,
    spherical_arrays,
    to_local,
)
from sph_hands.skeleton_io import SkeletonSequence

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False)


class _ZeroRng:
    def random(self, *args):
        return 0.0 if not args else np.zeros(args)


@pytest.mark.parametrize("xyz, expected", [
    ((0, 0, 1), (1, 0, 0)),
    ((1, 0, 0), (1, math.pi / 2, 0)),
    ((0, 0, 0), (0, 0, 0)),
    ((0, 0, -2), (2, math.pi, 0)),
])
def test_cart_to_spherical_fixed_points(xyz, expected):
    assert cart_to_spherical(*xyz, up_axis="z") == pytest.approx(expected, abs=1e-15)


def test_cart_to_spherical_quadrant():
    r, theta, phi = cart_to_spherical(0, -1, 0, up_axis="z")
    # atan2(-1, 0) = -pi/2, shifted into [0, 2pi)
    assert (r, theta) == (1.0, math.pi / 2)
    assert phi == pytest.approx(math.atan2(-1, 0) + 2 * math.pi, abs=1e-15)
    assert phi == pytest.approx(3 * math.pi / 2, abs=1e-15)


@pytest.mark.parametrize("up, vec", [("y", (0, 1, 0)), ("x", (1, 0, 0)), ("z", (0, 0, 1))])
def test_up_axis_is_polar_axis(up, vec):
    assert cart_to_spherical(*vec, up_axis=up) == pytest.approx((1, 0, 0), abs=1e-15)


def test_bad_up_axis():
    with pytest.raises(ValueError):
        cart_to_spherical(1, 0, 0, up_axis="w")


@settings(max_examples=300, deadline=None)
@given(finite, finite, finite, st.sampled_from("xyz"))
def test_spherical_invariants(x, y, z, up):
    r, theta, phi = cart_to_spherical(x, y, z, up_axis=up)
    assert r >= 0 and 0 <= theta <= math.pi and 0 <= phi < 2 * math.pi
    if r == 0:
        assert theta == 0 and phi == 0
    else:
        # spherical -> cartesian reproduces the (permuted) input
        p = {"z": (x, y, z), "y": (z, x, y), "x": (y, z, x)}[up]
        back = (r * math.sin(theta) * math.cos(phi), r * math.sin(theta) * math.sin(phi), r * math.cos(theta))
        assert back == pytest.approx(p, abs=1e-9 * max(1.0, r))


def test_to_local_antipodal_pair():
    coords = np.array([[[[0, 0, 0], [0, 0, 1.0]]]])
    fld = to_local(coords, up_axis="z")
    assert (fld.r[0, 0, 0, 1], fld.theta[0, 0, 0, 1], fld.phi[0, 0, 0, 1]) == (1, 0, 0)
    assert (fld.r[0, 0, 1, 0], fld.theta[0, 0, 1, 0], fld.phi[0, 0, 1, 0]) == (1, math.pi, 0)


def test_to_local_diagonal_and_symmetry(hand_seq):
    fld = to_local(hand_seq, up_axis="y")
    n = len(fld.subset)
    for arr in (fld.r, fld.theta, fld.phi):
        assert np.all(arr[..., np.arange(n), np.arange(n)] == 0.0)
    np.testing.assert_array_equal(fld.r, np.swapaxes(fld.r, -1, -2))


def test_to_local_radius_matches_brute_force(rng):
    coords = rng.normal(size=(1, 1, 8, 3))
    fld = to_local(coords, up_axis="y")
    for v in range(8):
        for w in range(8):
            d = math.sqrt(sum((coords[0, 0, w, k] - coords[0, 0, v, k]) ** 2 for k in range(3)))
            assert fld.r[0, 0, v, w] == pytest.approx(d, abs=1e-12)


def test_to_local_subset(hand_seq):
    fld = to_local(hand_seq, subset=[5, 1, 3])
    assert fld.r.shape == (6, 1, 3, 3) and fld.subset == (5, 1, 3)
    d = np.linalg.norm(hand_seq.coords[:, 0, 3] - hand_seq.coords[:, 0, 5], axis=-1)
    np.testing.assert_allclose(fld.r[:, 0, 0, 2], d, atol=1e-12)


@pytest.mark.parametrize("subset", [[0, 8], [0], [1, 1], [-1, 2]])
def test_to_local_bad_subset(hand_seq, subset):
    with pytest.raises(ValueError):
        to_local(hand_seq, subset=subset)


def test_about_up_axis_zero_angle_is_identity():
    np.testing.assert_array_equal(sample_rotation(_ZeroRng(), "about_up_axis", "y"), np.eye(3))


@pytest.mark.parametrize("mode", ["about_up_axis", "so3_uniform"])
def test_sampled_rotations_are_proper(rng, mode):
    for _ in range(200):
        R = sample_rotation(rng, mode)
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(R) - 1.0) < 1e-12
        check_rotation(R)


def test_haar_mean_vanishes():
    rng = np.random.default_rng(7)
    mean = sum(sample_rotation(rng, "so3_uniform") for _ in range(100_000)) / 100_000
    assert np.abs(mean).max() < 0.02


def test_haar_trace_distribution():
    # rotation angle density under Haar measure is (1 - cos w) / pi on [0, pi]
    rng = np.random.default_rng(3)
    angles = np.array([np.arccos(np.clip((np.trace(sample_rotation(rng)) - 1) / 2, -1, 1))
                       for _ in range(20_000)])
    # E[w] = pi/2 + 2/pi for that density
    assert angles.mean() == pytest.approx(math.pi / 2 + 2 / math.pi, abs=0.02)


def test_about_up_axis_keeps_up_vector(rng):
    for _ in range(20):
        R = sample_rotation(rng, "about_up_axis", "y")
        np.testing.assert_allclose(R @ [0, 1, 0], [0, 1, 0], atol=1e-15)


def test_check_rotation_rejects_reflection():
    with pytest.raises(ValueError):
        check_rotation(np.diag([1.0, 1.0, -1.0]))


def test_rotate_identity(hand_seq):
    assert np.array_equal(rotate(hand_seq, np.eye(3)).coords, hand_seq.coords)


def test_rotate_quarter_turn_about_z():
    seq = SkeletonSequence(np.array([[[[1.0, 0, 0]]]]))
    out = rotate(seq, axis_rotation(math.pi / 2, "z"))
    np.testing.assert_allclose(out.coords[0, 0, 0], [0, 1, 0], atol=1e-12)


def _pairwise(c):
    return np.linalg.norm(c[..., :, None, :] - c[..., None, :, :], axis=-1)


def test_rotate_is_isometry(hand_seq, rng):
    for _ in range(20):
        R = sample_rotation(rng)
        np.testing.assert_allclose(_pairwise(rotate(hand_seq, R).coords), _pairwise(hand_seq.coords),
                                   atol=1e-10)


def test_rotate_keeps_metadata(hand_seq):
    assert rotate(hand_seq, np.eye(3)).label == hand_seq.label


class TestFieldProperties:
    def test_radii_rigid_invariant(self, hand_seq, rng):
        base = to_local(hand_seq)
        for _ in range(20):
            out = to_local(rotate(hand_seq, sample_rotation(rng)))
            np.testing.assert_allclose(out.r, base.r, atol=1e-10)

    @pytest.mark.parametrize("up", ["x", "y", "z"])
    def test_azimuth_shift(self, hand_seq, rng, up):
        base = to_local(hand_seq, up_axis=up)
        off = ~np.eye(8, dtype=bool)
        for alpha in rng.uniform(0, 2 * math.pi, 10):
            out = to_local(rotate(hand_seq, axis_rotation(alpha, up)), up_axis=up)
            np.testing.assert_allclose(out.r, base.r, atol=1e-10)
            np.testing.assert_allclose(out.theta, base.theta, atol=1e-10)
            shifted = np.mod(base.phi + alpha, 2 * math.pi)
            # compare on the circle
            diff = np.angle(np.exp(1j * (out.phi - shifted)))
            assert np.abs(diff[..., off]).max() < 1e-10

    def test_translation_invariant(self, hand_seq, rng):
        base = to_local(hand_seq)
        shifted = hand_seq.with_coords(hand_seq.coords + rng.normal(size=3))
        out = to_local(shifted)
        np.testing.assert_allclose(out.r, base.r, atol=1e-12)
        np.testing.assert_allclose(out.theta, base.theta, atol=1e-12)
        diff = np.angle(np.exp(1j * (out.phi - base.phi)))
        assert np.abs(diff).max() < 1e-12

    def test_spherical_arrays_broadcast(self, rng):
        pts = rng.normal(size=(4, 5, 3))
        r, theta, phi = spherical_arrays(pts, "y")
        assert r.shape == theta.shape == phi.shape == (4, 5)
