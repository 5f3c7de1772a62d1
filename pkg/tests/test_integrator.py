"""Embedded RK pair and step-size controller tests.

The convergence-order checks regress global error against step size on
y' = -y, whose exact solution is known, using an in-test fixed-step
walker built straight from the exported tableau — an independent route
to the same numbers :func:`integrate_step` produces.
"""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gravicell.basins import (
    TABLEAU_A,
    TABLEAU_B_HIGH,
    TABLEAU_B_LOW,
    TABLEAU_C,
    IntegratorConfig,
    adapt_step,
    integrate_step,
)
from gravicell.errors import ParameterError


def fixed_step_walk(weights, f, y0: float, t_end: float, n: int) -> float:
    """Integrate y' = f(y) with n equal steps using the given b-row."""
    h = t_end / n
    y = y0
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + h * TABLEAU_A[1][0] * k1)
        k3 = f(y + h * (TABLEAU_A[2][0] * k1 + TABLEAU_A[2][1] * k2))
        y = y + h * (weights[0] * k1 + weights[1] * k2 + weights[2] * k3)
    return y


def error_slope(weights, use_engine: bool = False) -> float:
    """Log-log slope of |y(1) - e^-1| against h for y' = -y."""
    f = lambda y: -y  # noqa: E731
    ns = np.array([5, 10, 20, 40, 80])
    errs = []
    for n in ns:
        if use_engine:
            y = 1.0
            for _ in range(n):
                y, _ = integrate_step(f, y, 1.0 / n, direction="descent")
            y_end = float(y)
        else:
            y_end = fixed_step_walk(weights, f, 1.0, 1.0, int(n))
        errs.append(abs(y_end - np.exp(-1.0)))
    slope, _ = np.polyfit(np.log(1.0 / ns), np.log(errs), 1)
    return float(slope)


class TestTableau:
    def test_node_consistency(self):
        # Each node c_i equals its row sum of A.
        assert TABLEAU_C[0] == 0.0
        assert TABLEAU_C[1] == pytest.approx(sum(TABLEAU_A[1]))
        assert TABLEAU_C[2] == pytest.approx(sum(TABLEAU_A[2]))

    def test_order_conditions(self):
        # Algebraic conditions: both rows integrate constants and slopes
        # exactly; only the high row also satisfies the third-order pair.
        c = np.array(TABLEAU_C)
        bh = np.array(TABLEAU_B_HIGH)
        bl = np.array(TABLEAU_B_LOW)
        assert bh.sum() == pytest.approx(1.0)
        assert bl.sum() == pytest.approx(1.0)
        assert (bh * c).sum() == pytest.approx(0.5)
        assert (bl * c).sum() == pytest.approx(0.5)
        assert (bh * c * c).sum() == pytest.approx(1.0 / 3.0)
        assert (bl * c * c).sum() != pytest.approx(1.0 / 3.0)

    def test_high_row_converges_at_order_three(self):
        assert error_slope(TABLEAU_B_HIGH) == pytest.approx(3.0, abs=0.3)

    def test_low_row_converges_at_order_two(self):
        assert error_slope(TABLEAU_B_LOW) == pytest.approx(2.0, abs=0.3)

    def test_engine_step_matches_reimplementation(self):
        # The package stepper and the in-test walker are two routes to
        # the same high-order solution.
        f = lambda y: -y  # noqa: E731
        y_engine = 1.0
        for _ in range(10):
            y_engine, _ = integrate_step(f, y_engine, 0.1, direction="descent")
        y_walk = fixed_step_walk(TABLEAU_B_HIGH, f, 1.0, 1.0, 10)
        assert float(y_engine) == pytest.approx(y_walk, rel=1e-14)
        assert error_slope(None, use_engine=True) == pytest.approx(3.0, abs=0.3)


class TestIntegrateStep:
    def test_frozen_single_step_values(self):
        # Hand-expanded stages for y' = +y from y=1, h=0.1:
        # k = (1, 1.1, 1.0525) -> high 1.1051666..., low 1.105.
        y, err = integrate_step(lambda y: -y, 1.0, 0.1, direction="ascent")
        assert float(y) == pytest.approx(1.1051666666666667, rel=1e-15)
        assert float(err) == pytest.approx(1.6666666666666666e-4, rel=1e-9)
        # Same flow descending: k = (-1, -0.9, -0.9525).
        y, err = integrate_step(lambda y: -y, 1.0, 0.1, direction="descent")
        assert float(y) == pytest.approx(0.9048333333333334, rel=1e-15)
        assert float(err) == pytest.approx(1.6666666666666666e-4, rel=1e-9)

    def test_ascent_mirrors_descent_on_negated_field(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1.0, 1.0, (6, 2))
        f = lambda p: np.stack([-p[..., 1], p[..., 0] - 0.3 * p[..., 1]], axis=-1)  # noqa: E731
        neg = lambda p: -f(p)  # noqa: E731
        up, err_up = integrate_step(f, pts, 0.2, direction="ascent")
        down, err_down = integrate_step(neg, pts, 0.2, direction="descent")
        np.testing.assert_allclose(up, down, rtol=0, atol=0)
        np.testing.assert_allclose(err_up, err_down, rtol=0, atol=0)

    def test_batch_matches_scalar_loop(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-1.0, 1.0, (5, 2))
        hs = rng.uniform(0.05, 0.5, 5)
        f = lambda p: np.stack([np.sin(p[..., 1]), np.cos(p[..., 0])], axis=-1)  # noqa: E731
        batch_y, batch_err = integrate_step(f, pts, hs)
        for i in range(5):
            yi, erri = integrate_step(f, pts[i], hs[i])
            np.testing.assert_allclose(batch_y[i], yi, atol=1e-15)
            assert batch_err[i] == pytest.approx(float(erri), abs=1e-15)

    def test_bad_direction_rejected(self):
        with pytest.raises(ParameterError):
            integrate_step(lambda y: y, 1.0, 0.1, direction="sideways")


class TestAdaptStep:
    def test_frozen_reject_and_shrink(self):
        cfg = IntegratorConfig()
        accept, h_next = adapt_step(8.0 * cfg.tol, 0.5, cfg)
        assert accept is False
        assert h_next == pytest.approx(0.225)  # 0.9 * (1/8)^(1/3) * 0.5

    def test_frozen_accept_and_grow(self):
        cfg = IntegratorConfig()
        accept, h_next = adapt_step(cfg.tol / 8.0, 0.5, cfg)
        assert accept is True
        assert h_next == pytest.approx(0.9)  # 0.9 * 8^(1/3) * 0.5

    def test_floor_step_always_accepted(self):
        cfg = IntegratorConfig()
        accept, h_next = adapt_step(1e6, cfg.h_min, cfg)
        assert accept is True
        assert h_next == cfg.h_min

    @settings(max_examples=100, deadline=None)
    @given(
        err=st.floats(0.0, 1e6, allow_nan=False),
        h=st.floats(1e-3, 2.0, allow_nan=False),
    )
    def test_controller_invariants(self, err, h):
        cfg = IntegratorConfig()
        accept, h_next = adapt_step(err, h, cfg)
        assert cfg.h_min <= h_next <= cfg.h_max
        if err <= cfg.tol or h <= cfg.h_min * (1.0 + 1e-12):
            assert accept
        else:
            assert not accept

    def test_vector_batch_matches_scalars(self):
        cfg = IntegratorConfig()
        errs = np.array([0.0, 5e-4, 1e-3, 2e-3, 1.0])
        hs = np.array([0.5, 0.001, 1.9, 0.25, 0.125])
        acc, nxt = adapt_step(errs, hs, cfg)
        for i in range(len(errs)):
            a, n = adapt_step(float(errs[i]), float(hs[i]), cfg)
            assert bool(acc[i]) == a
            assert nxt[i] == pytest.approx(n)


class TestIntegratorConfig:
    def test_defaults(self):
        cfg = IntegratorConfig()
        assert (cfg.tol, cfg.h_init, cfg.h_min, cfg.h_max, cfg.max_steps) == (
            1e-3,
            0.5,
            1e-3,
            2.0,
            10000,
        )

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"tol": 0.0},
            {"h_min": 0.0},
            {"h_min": 0.6},  # above h_init
            {"h_max": 0.1},  # below h_init
            {"max_steps": 0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ParameterError):
            IntegratorConfig(**kwargs)
