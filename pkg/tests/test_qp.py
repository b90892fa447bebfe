"""Box-constrained active-set QP solver."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dimless_mpc.qp import QpError, solve_box_qp


def _random_psd(rng, n, scale=1.0):
    A = rng.normal(size=(n, n))
    return A @ A.T + 0.5 * np.eye(n) * scale


def _projected_gradient(H, g, lb, ub, x):
    grad = H @ x + g
    pg = grad.copy()
    at_lb = x <= lb + 1e-10
    at_ub = x >= ub - 1e-10
    pg[at_lb] = np.minimum(pg[at_lb], 0.0)
    pg[at_ub] = np.maximum(pg[at_ub], 0.0)
    return pg


class TestBoxQp:
    def test_unconstrained_matches_linear_solve(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = rng.integers(1, 8)
            H = _random_psd(rng, n)
            g = rng.normal(size=n)
            x = solve_box_qp(H, g, np.full(n, -np.inf), np.full(n, np.inf))
            assert np.allclose(x, np.linalg.solve(H, -g), rtol=1e-8, atol=1e-10)

    def test_kkt_on_random_boxes(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(1, 10))
            H = _random_psd(rng, n)
            g = rng.normal(size=n) * 5.0
            lb = rng.uniform(-1.0, 0.0, n)
            ub = rng.uniform(0.0, 1.0, n)
            x = solve_box_qp(H, g, lb, ub)
            assert np.all(x >= lb - 1e-12) and np.all(x <= ub + 1e-12)
            pg = _projected_gradient(H, g, lb, ub, x)
            scale = max(1.0, np.abs(g).max())
            assert np.abs(pg).max() <= 1e-7 * scale

    def test_clamps_to_equal_bounds(self):
        H = np.eye(2)
        g = np.array([1.0, -1.0])
        x = solve_box_qp(H, g, np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        assert np.allclose(x, [0.5, 0.5])

    def test_inconsistent_bounds(self):
        with pytest.raises(QpError):
            solve_box_qp(np.eye(1), np.zeros(1), np.array([1.0]), np.array([0.0]))

    def test_tiny_gradient_still_resolved(self):
        # ill-scaled H with a tiny gradient: the solver must still move off
        # zero instead of declaring stationarity early
        H = np.diag([1e5, 1e5])
        g = np.array([-1e-7, 2e-7])
        x = solve_box_qp(H, g, np.full(2, -1.0), np.full(2, 1.0))
        assert np.allclose(x, -g / 1e5, rtol=1e-6)

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        H = _random_psd(rng, 6)
        g = rng.normal(size=6) * 3
        lb, ub = np.full(6, -0.2), np.full(6, 0.2)
        x1 = solve_box_qp(H, g, lb, ub)
        x2 = solve_box_qp(H, g, lb, ub)
        assert np.array_equal(x1, x2)

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_objective_not_worse_than_vertices(self, seed):
        rng = np.random.default_rng(seed)
        n = 3
        H = _random_psd(rng, n)
        g = rng.normal(size=n)
        lb = np.full(n, -1.0)
        ub = np.full(n, 1.0)
        x = solve_box_qp(H, g, lb, ub)

        def f(z):
            return 0.5 * z @ H @ z + g @ z

        for corner in np.ndindex(*(2,) * n):
            z = np.where(np.array(corner) == 0, lb, ub)
            assert f(x) <= f(z) + 1e-9
