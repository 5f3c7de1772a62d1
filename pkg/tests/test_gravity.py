"""Attraction-field tests against a direct summation oracle."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gravicell.errors import ParameterError
from gravicell.gravity import build_kernels, force_field, potential_field


def brute_force_sum(img: np.ndarray, radius: int, eps: float = 0.5):
    """Direct per-offset summation of softened inverse-square pulls.

    Independent of the kernel/correlation machinery: mirror-pads the
    image and accumulates dx/|d|^3 and dy/|d|^3 contributions one offset
    at a time.
    """
    h, w = img.shape
    pad = np.pad(img, radius, mode="reflect")
    fx = np.zeros((h, w))
    fy = np.zeros((h, w))
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dx == 0 and dy == 0:
                continue
            d = max(np.hypot(dx, dy), eps)
            mass = pad[radius + dy : radius + dy + h, radius + dx : radius + dx + w]
            fx += mass * (dx / d**3)
            fy += mass * (dy / d**3)
    return fx, fy


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.abs(b).max(), 1e-30)
    return float(np.abs(a - b).max() / scale)


class TestKernels:
    def test_fixed_taps(self):
        k = build_kernels(3)
        r = k.radius
        assert k.kx[r, r] == 0.0
        assert k.ky[r, r] == 0.0
        assert k.kp[r, r] == -2.0  # softened self-potential at eps 0.5
        assert k.kx[r, r + 1] == 1.0  # unit mass one pixel to the right
        assert k.kx[r + 1, r + 1] == pytest.approx(2.0**-1.5)
        assert k.kp[r, r + 1] == -1.0
        assert k.kp[r + 1, r + 1] == pytest.approx(-(2.0**-0.5))

    def test_symmetries(self):
        k = build_kernels(5)
        assert np.array_equal(k.kx, -k.kx[:, ::-1])  # odd in x
        assert np.array_equal(k.kx, k.kx[::-1, :])  # even in y
        assert np.array_equal(k.ky, k.kx.T)
        assert np.array_equal(k.kp, k.kp[::-1, ::-1])

    def test_softening_floors_near_taps(self):
        # eps 2.0 floors every distance below 2, so the four nearest taps
        # all use d = 2.
        k = build_kernels(3, softening_eps=2.0)
        r = k.radius
        assert k.kx[r, r + 1] == pytest.approx(1.0 / 8.0)
        assert k.kx[r + 1, r + 1] == pytest.approx(1.0 / 8.0)

    def test_invalid_parameters(self):
        with pytest.raises(ParameterError):
            build_kernels(0)
        with pytest.raises(ParameterError):
            build_kernels(3, softening_eps=-0.1)


class TestForceField:
    def test_matches_brute_force_direct_route(self):
        rng = np.random.default_rng(3)
        k = build_kernels(7)
        for _ in range(5):
            img = rng.uniform(0.0, 1.0, (16, 16))
            f = force_field(img, k)
            bx, by = brute_force_sum(img, 7)
            assert rel_err(f.fx, bx) <= 1e-6
            assert rel_err(f.fy, by) <= 1e-6

    def test_matches_brute_force_fft_route(self):
        rng = np.random.default_rng(4)
        k = build_kernels(16)  # above the direct-window cutoff
        for _ in range(3):
            img = rng.uniform(0.0, 1.0, (20, 20))
            f = force_field(img, k)
            bx, by = brute_force_sum(img, 16)
            assert rel_err(f.fx, bx) <= 1e-6
            assert rel_err(f.fy, by) <= 1e-6

    def test_constant_image_has_zero_force(self):
        k = build_kernels(6)
        f = force_field(np.full((24, 24), 0.7), k)
        assert np.abs(f.fx).max() < 1e-12
        assert np.abs(f.fy).max() < 1e-12

    def test_single_blob_pulls_inward(self):
        yy, xx = np.mgrid[0:33, 0:33].astype(np.float64)
        img = np.exp(-((xx - 16.0) ** 2 + (yy - 16.0) ** 2) / 20.0)
        f = force_field(img, build_kernels(10))
        # Left of center the pull is to the right, and so on.
        assert f.fx[16, 8] > 0 and f.fx[16, 24] < 0
        assert f.fy[8, 16] > 0 and f.fy[24, 16] < 0

    def test_magnitude_and_shape(self):
        rng = np.random.default_rng(5)
        img = rng.uniform(0.0, 1.0, (12, 18))
        f = force_field(img, build_kernels(4))
        assert f.shape == (12, 18)
        assert np.array_equal(f.magnitude(), np.hypot(f.fx, f.fy))

    def test_radius_too_large_for_frame(self):
        with pytest.raises(ParameterError):
            force_field(np.zeros((10, 10)), build_kernels(10))

    @settings(max_examples=25, deadline=None)
    @given(
        seed=st.integers(0, 2**31 - 1),
        a=st.floats(-2.0, 2.0, allow_nan=False),
        b=st.floats(-2.0, 2.0, allow_nan=False),
    )
    def test_linearity(self, seed, a, b):
        rng = np.random.default_rng(seed)
        img1 = rng.uniform(0.0, 1.0, (12, 12))
        img2 = rng.uniform(0.0, 1.0, (12, 12))
        k = build_kernels(5)
        lhs = force_field(a * img1 + b * img2, k)
        f1 = force_field(img1, k)
        f2 = force_field(img2, k)
        np.testing.assert_allclose(lhs.fx, a * f1.fx + b * f2.fx, atol=1e-9)
        np.testing.assert_allclose(lhs.fy, a * f1.fy + b * f2.fy, atol=1e-9)


class TestPotential:
    def test_delta_image_reproduces_kernel(self):
        img = np.zeros((15, 15))
        img[7, 7] = 1.0
        k = build_kernels(4)
        phi = potential_field(img, k)
        assert phi[7, 7] == pytest.approx(-2.0)
        assert phi[7, 8] == pytest.approx(-1.0)
        assert phi[8, 8] == pytest.approx(-(2.0**-0.5))

    def test_nonpositive_for_nonnegative_mass(self):
        rng = np.random.default_rng(6)
        img = rng.uniform(0.0, 1.0, (20, 20))
        phi = potential_field(img, build_kernels(6))
        assert (phi <= 0.0).all()

    def test_well_deepest_at_blob_center(self):
        yy, xx = np.mgrid[0:33, 0:33].astype(np.float64)
        img = np.exp(-((xx - 16.0) ** 2 + (yy - 16.0) ** 2) / 20.0)
        phi = potential_field(img, build_kernels(10))
        assert np.unravel_index(np.argmin(phi), phi.shape) == (16, 16)
