"""MDP construction, Gaussian transforms, similarity and objectives."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dimless_mpc.dimensional import match_similar_system
from dimless_mpc.dynamics import ScalingTransform, cartpole_quantities
from dimless_mpc.envs import cartpole_mdp, cartpole_stage_cost, make_cartpole_task
from dimless_mpc.mdp import (
    CovarianceError,
    EpisodeError,
    StructureError,
    check_similarity,
    evaluate_policy_objective,
    nondimensionalize_mdp,
    transform_gaussian,
)


def reference_mdp(**kwargs):
    return cartpole_mdp(make_cartpole_task(cartpole_quantities(**kwargs)))


def matched_mdp(l):
    qs = match_similar_system(
        cartpole_quantities(), fixed=("mu_f", "g"), new_values={"l": l}
    )
    return cartpole_mdp(make_cartpole_task(qs))


def scaling_for(mdp):
    return ScalingTransform.from_quantities(
        mdp.params, mdp.model.state_dims, mdp.model.input_dims
    )


class TestTransformGaussian:
    def test_identity(self):
        mu, sig = transform_gaussian([1.0, 2.0], np.eye(2), np.ones(2))
        assert np.array_equal(mu, [1.0, 2.0])
        assert np.array_equal(sig, np.eye(2))

    def test_diag_two(self):
        mu, sig = transform_gaussian(np.zeros(2), np.eye(2), np.array([2.0, 2.0]))
        assert np.array_equal(mu, np.zeros(2))
        assert np.allclose(sig, 0.25 * np.eye(2))

    def test_deterministic_shift(self):
        mu, sig = transform_gaussian([2.0, 4.0], np.zeros((2, 2)), [2.0, 4.0])
        assert np.allclose(mu, [1.0, 1.0])
        assert np.array_equal(sig, np.zeros((2, 2)))

    def test_rejects_non_psd(self):
        with pytest.raises(CovarianceError):
            transform_gaussian(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]),
                               np.ones(2))

    def test_rejects_asymmetric(self):
        with pytest.raises(CovarianceError):
            transform_gaussian(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]),
                               np.ones(2))

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_psd_and_determinant_scaling(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 5))
        A = rng.normal(size=(n, n))
        sigma = A @ A.T
        M = rng.uniform(0.5, 3.0, n)
        _, sig_t = transform_gaussian(rng.normal(size=n), sigma, M)
        eig = np.linalg.eigvalsh(sig_t)
        assert eig.min() > -1e-10 * max(1.0, eig.max())
        det_expected = np.linalg.det(sigma) / np.prod(M) ** 2
        assert np.linalg.det(sig_t) == pytest.approx(det_expected, rel=1e-8)


class TestNondimensionalize:
    def test_identity_scaling(self):
        mdp = reference_mdp()
        ident = ScalingTransform.identity(4, 1)
        dm = nondimensionalize_mdp(mdp, ident)
        s, a = np.array([0.1, 2.0, 0.0, 0.0]), np.array([1.0])
        assert np.allclose(dm.transition(s, a), mdp.transition(s, a), rtol=1e-14)
        assert dm.stage_cost(s, a) == mdp.stage_cost(s, a)

    def test_cartpole_position_bound(self):
        mdp = reference_mdp()
        dm = nondimensionalize_mdp(mdp, scaling_for(mdp))
        assert dm.x_ub[0] == pytest.approx(3.0, rel=1e-12)

    def test_stage_cost_invariant(self):
        # the angle is dimensionless, so the cost is unchanged by scaling
        mdp = reference_mdp()
        dm = nondimensionalize_mdp(mdp, scaling_for(mdp))
        s = np.array([0.5, 1.2, 0.1, -0.3])
        assert dm.stage_cost(s, np.zeros(1)) == pytest.approx(
            cartpole_stage_cost(s * scaling_for(mdp).M_x, np.zeros(1)), rel=1e-14
        )

    def test_matched_transitions_agree(self):
        a, b = reference_mdp(), matched_mdp(0.1)
        da = nondimensionalize_mdp(a, scaling_for(a))
        db = nondimensionalize_mdp(b, scaling_for(b))
        rng = np.random.default_rng(0)
        for _ in range(10):
            s = rng.normal(size=4)
            u = rng.normal(size=1)
            assert np.abs(da.transition(s, u) - db.transition(s, u)).max() < 1e-10

    def test_gaussian_noise_transformed(self):
        from dataclasses import replace

        mdp = reference_mdp()
        noisy = replace(mdp, noise_mu=np.zeros(4), noise_sigma=0.01 * np.eye(4))
        sc = scaling_for(mdp)
        dm = nondimensionalize_mdp(noisy, sc)
        assert np.allclose(np.diag(dm.noise_sigma), 0.01 / sc.M_x**2, rtol=1e-12)


class TestCheckSimilarity:
    def test_matched_pair_similar(self):
        report = check_similarity(reference_mdp(), matched_mdp(0.1))
        assert report["similar"]
        assert report["pi_distance"] < 1e-12

    def test_unmatched_masses_dissimilar(self):
        report = check_similarity(reference_mdp(), reference_mdp(m_p=0.2))
        assert not report["similar"]
        assert report["pi_distance"] > 0.0

    def test_reflexive(self):
        m = reference_mdp()
        report = check_similarity(m, m)
        assert report["similar"]
        assert report["pi_distance"] == 0.0
        assert report["space_mismatch"] == 0.0
        assert report["cost_mismatch"] == 0.0

    def test_symmetric(self):
        a, b = reference_mdp(), matched_mdp(5.0)
        ra, rb = check_similarity(a, b), check_similarity(b, a)
        assert ra["similar"] == rb["similar"]
        assert ra["pi_distance"] == pytest.approx(rb["pi_distance"], abs=1e-15)

    def test_requires_params(self):
        from dataclasses import replace

        a = reference_mdp()
        with pytest.raises(StructureError):
            check_similarity(a, replace(a, params=None))


class TestEvaluateObjective:
    def test_zero_cost(self):
        from dataclasses import replace

        mdp = replace(reference_mdp(), stage_cost=lambda s, a: 0.0)
        res = evaluate_policy_objective(mdp, lambda s: np.zeros(1), np.zeros(4), 5)
        assert res.objective == 0.0

    def test_gamma_zero_limit(self):
        # gamma must be in (0, 1]; a vanishing discount keeps only the first
        # stage up to a negligible tail
        from dataclasses import replace

        mdp = replace(reference_mdp(), gamma=1e-12)
        x0 = np.array([0.0, np.pi, 0.0, 0.0])
        res = evaluate_policy_objective(mdp, lambda s: np.zeros(1), x0, 5)
        assert res.objective == pytest.approx(
            cartpole_stage_cost(x0, np.zeros(1)), abs=1e-10
        )

    def test_upright_hold(self):
        mdp = reference_mdp()
        res = evaluate_policy_objective(mdp, lambda s: np.zeros(1), np.zeros(4), 300)
        assert res.objective == pytest.approx(-30.0, rel=1e-6)

    def test_seed_independent_when_deterministic(self):
        mdp = reference_mdp()
        x0 = np.array([0.0, np.pi, 0.0, 0.0])
        r1 = evaluate_policy_objective(mdp, lambda s: np.ones(1), x0, 20, seed=1)
        r2 = evaluate_policy_objective(mdp, lambda s: np.ones(1), x0, 20, seed=99)
        assert r1.objective == r2.objective

    def test_policy_failure_carries_step(self):
        mdp = reference_mdp()

        def bad(s):
            raise RuntimeError("nope")

        with pytest.raises(EpisodeError) as exc:
            evaluate_policy_objective(mdp, bad, np.zeros(4), 3)
        assert exc.value.step == 0

    def test_objective_transfer(self):
        mdp = reference_mdp()
        sc = scaling_for(mdp)
        dm = nondimensionalize_mdp(mdp, sc)
        x0 = np.array([0.3, 2.5, 0.0, 0.1])

        def pol(s):
            return np.array([3.0 * np.sin(s[1]) - 0.5 * s[2]])

        J = evaluate_policy_objective(mdp, pol, x0, 100).objective
        Jt = evaluate_policy_objective(
            dm, lambda st: pol(st * sc.M_x) / sc.M_u, x0 / sc.M_x, 100
        ).objective
        assert Jt == pytest.approx(J / sc.m_cost, rel=1e-9)
