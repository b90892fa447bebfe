"""Benchmark tasks: family generation, rollouts and policy transfer."""

import math

import numpy as np
import pytest

from dimless_mpc.dimensional import pi_distance
from dimless_mpc.envs import (
    CARTPOLE_DT_NONDIM,
    CARTPOLE_EPISODE_STEPS,
    RACE_TIME_LIMIT_NONDIM,
    CartpoleTask,
    build_cartpole_problem,
    cartpole_family,
    cartpole_mdp,
    make_race_task,
    racecar_family,
    run_task,
)
from dimless_mpc.mdp import check_similarity
from dimless_mpc.mpc import (
    RACECAR_DT_NONDIM,
    DimensionlessMpcPolicy,
    nondimensionalize_mpc,
)


class TestFamilies:
    def test_cartpole_family_is_similar(self):
        fam = cartpole_family([0.1, 0.8, 5.0])
        assert len(fam) == 3
        for i in range(3):
            for j in range(i + 1, 3):
                assert pi_distance(fam[i][0], fam[j][0]) < 1e-12

    def test_cartpole_family_values(self):
        (qs, sc, task) = cartpole_family([0.8])[0]
        assert qs.value("l") == pytest.approx(0.8)
        assert qs.value("g") == pytest.approx(9.81)
        assert sc.m_t == pytest.approx(math.sqrt(0.8 / 9.81), rel=1e-12)
        assert task.dt == pytest.approx(0.05, rel=1e-12)

    def test_racecar_family_is_similar(self):
        fam = racecar_family([(0.06, 0.043), (4.0, 1500.0)])
        assert pi_distance(fam[0][0], fam[1][0]) < 1e-12
        # the track scales geometrically with the car
        ratio = 4.0 / 0.06
        assert fam[1][2].track.total_length == pytest.approx(
            fam[0][2].track.total_length * ratio, rel=1e-12
        )

    def test_mdp_similarity_across_family(self):
        fam = cartpole_family([0.8, 5.0])
        a = cartpole_mdp(fam[0][2])
        b = cartpole_mdp(fam[1][2])
        report = check_similarity(a, b)
        assert report["similar"]
        assert report["pi_distance"] < 1e-9


class TestTaskGeometry:
    def test_cartpole_dt_scales_with_sqrt_l(self):
        fam = cartpole_family([0.8, 5.0])
        ratio = fam[1][2].dt / fam[0][2].dt
        assert ratio == pytest.approx(math.sqrt(5.0 / 0.8), rel=1e-12)

    def test_race_step_limit(self):
        fam = racecar_family([(0.06, 0.043)])
        task = fam[0][2]
        assert task.step_limit == int(round(RACE_TIME_LIMIT_NONDIM / RACECAR_DT_NONDIM))
        # 10 seconds of driving at the small-car scale
        assert task.step_limit * task.dt == pytest.approx(10.0, rel=1e-3)

    def test_race_dt_scales_with_l(self):
        fam = racecar_family([(0.06, 0.043), (4.0, 1500.0)])
        assert fam[1][2].dt / fam[0][2].dt == pytest.approx(4.0 / 0.06, rel=1e-12)

    def test_rejects_bad_episode_steps(self):
        fam = cartpole_family([0.8])
        with pytest.raises(ValueError):
            CartpoleTask(params=fam[0][0], episode_steps=0)


class TestBuildProblem:
    def test_rejects_wrong_weight_count(self):
        qs = cartpole_family([0.8])[0][0]
        with pytest.raises(ValueError):
            build_cartpole_problem(qs, weights=(1.0, 2.0))

    def test_rejects_negative_weights(self):
        qs = cartpole_family([0.8])[0][0]
        with pytest.raises(ValueError):
            build_cartpole_problem(qs, weights=(1.0, -1.0, 0.1, 0.1, 0.05))

    def test_bounds_scale_with_system(self):
        small = build_cartpole_problem(cartpole_family([0.1])[0][0])
        ref = build_cartpole_problem(cartpole_family([0.8])[0][0])
        assert small.x_ub[0] == pytest.approx(ref.x_ub[0] * 0.1 / 0.8, rel=1e-12)
        # the dimensionless force bound is the same for both systems
        s_small = small.scaling
        s_ref = ref.scaling
        assert small.u_ub[0] / s_small.M_u[0] == pytest.approx(
            ref.u_ub[0] / s_ref.M_u[0], rel=1e-12
        )


class TestRunCartpole:
    def test_upright_hold_scores_full(self):
        qs = cartpole_family([0.8])[0][0]
        task = CartpoleTask(params=qs, episode_steps=50, x0=np.zeros(4))
        res = run_task(task, lambda s: np.zeros(1))
        assert res.success
        assert res.objective == pytest.approx(-0.1 * 50, rel=1e-12)
        assert res.info["score"] == pytest.approx(5.0, rel=1e-12)

    def test_hanging_scores_zero(self):
        qs = cartpole_family([0.8])[0][0]
        task = CartpoleTask(params=qs, episode_steps=30)
        res = run_task(task, lambda s: np.zeros(1))
        assert not res.success
        assert res.objective == pytest.approx(0.0, abs=1e-12)

    def test_policy_failure_reported(self):
        qs = cartpole_family([0.8])[0][0]
        task = CartpoleTask(params=qs, episode_steps=10)

        def bad(s):
            raise RuntimeError("nope")

        res = run_task(task, bad)
        assert not res.success
        assert res.info["failed_at_step"] == 0

    def test_shapes(self):
        qs = cartpole_family([0.8])[0][0]
        task = CartpoleTask(params=qs, episode_steps=7)
        res = run_task(task, lambda s: np.zeros(1))
        assert res.states.shape == (8, 4)
        assert res.inputs.shape == (7, 1)
        assert res.costs.shape == (7,)


class TestRunRace:
    def test_standstill_truncates_without_lap(self):
        task = racecar_family([(0.06, 0.043)])[0][2]
        res = run_task(task, lambda s: np.zeros(2))
        assert not res.success
        assert not res.info["lap"]
        assert res.info["lap_time"] == np.inf
        assert res.info["steps"] == task.step_limit

    def test_failure_reported(self):
        task = racecar_family([(0.06, 0.043)])[0][2]

        def bad(s):
            raise RuntimeError("crash")

        res = run_task(task, bad)
        assert not res.success
        assert res.info["failed_at_step"] == 0

    def test_unknown_task_type(self):
        with pytest.raises(TypeError):
            run_task(object(), lambda s: np.zeros(1))


class TestPolicyTransfer:
    def _policy_for(self, qs, sc):
        problem = build_cartpole_problem(qs)
        return DimensionlessMpcPolicy(nondimensionalize_mpc(problem, sc), sc)

    def test_swingup_succeeds_on_reference(self):
        (qs, sc, task) = cartpole_family([0.8])[0]
        res = run_task(task, self._policy_for(qs, sc))
        assert res.success
        assert res.info["score"] > 0.9 * 0.1 * CARTPOLE_EPISODE_STEPS

    def test_zero_shot_transfer_matches_trajectories(self):
        fam = cartpole_family([0.8, 5.0])
        results = []
        for qs, sc, _ in fam:
            task = CartpoleTask(params=qs, episode_steps=80)
            res = run_task(task, self._policy_for(qs, sc))
            results.append((res, sc))
        (ra, sa), (rb, sb) = results
        ta = ra.states / sa.M_x
        tb = rb.states / sb.M_x
        rms = np.sqrt(np.mean((ta - tb) ** 2))
        assert rms < 1e-6
        assert ra.objective == pytest.approx(rb.objective, abs=1e-7)
