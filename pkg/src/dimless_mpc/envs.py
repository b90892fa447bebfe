"""Benchmark tasks: cartpole swing-up and race-car lap, with similar-system
family generation and closed-loop scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dimensional import QuantitySet, match_similar_system
from .dynamics import (
    ScalingTransform,
    Track,
    cartpole_model,
    cartpole_quantities,
    desk_track,
    racecar_quantities,
)
from .mdp import EpisodeResult, MdpInstance
from .mpc import DiscretizedOde, MpcProblem, RACECAR_DT_NONDIM

__all__ = [
    "CartpoleTask",
    "RaceTask",
    "cartpole_family",
    "racecar_family",
    "make_cartpole_task",
    "make_race_task",
    "build_cartpole_problem",
    "cartpole_mdp",
    "run_task",
    "CARTPOLE_DT_NONDIM",
    "CARTPOLE_EPISODE_STEPS",
    "CARTPOLE_HORIZON",
    "CARTPOLE_DEFAULT_WEIGHTS",
    "RACE_TIME_LIMIT_NONDIM",
]

# dimensionless sampling time fixed across the cartpole family
# (0.05 s at the reference scale l = 0.8 m)
CARTPOLE_DT_NONDIM = 0.05 / math.sqrt(0.8 / 9.81)
CARTPOLE_EPISODE_STEPS = 300
CARTPOLE_HORIZON = 20
CARTPOLE_GAMMA = 1.0
# tunable dimensionless weights: stage diag on [xi, phi, xi', phi'] plus the
# input weight; terminal weight is 20x the stage weight
CARTPOLE_DEFAULT_WEIGHTS = (1.0, 10.0, 0.1, 0.1, 0.05)
CARTPOLE_TERMINAL_FACTOR = 20.0
CARTPOLE_SUCCESS_ANGLE = 0.1  # rad, over the final 20% of the episode

# race truncation: 10 s of driving at the reference (small-car) scale,
# expressed in dimensionless time so it transfers across scales
RACE_TIME_LIMIT_NONDIM = 10.0 / (0.06 * 5.0)


def _wrap_angle(phi):
    return (phi + np.pi) % (2.0 * np.pi) - np.pi


def cartpole_stage_cost(s, a) -> float:
    """Reward proximity to upright: 0 at hanging, -0.1 per step at upright."""
    phi = abs(_wrap_angle(np.asarray(s, float)[..., 1]))
    return float(-(np.pi - phi) / (10.0 * np.pi))


@dataclass(frozen=True)
class CartpoleTask:
    params: QuantitySet
    episode_steps: int = CARTPOLE_EPISODE_STEPS
    x0: np.ndarray = field(default_factory=lambda: np.array([0.0, np.pi, 0.0, 0.0]))

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, float))
        if self.episode_steps < 1:
            raise ValueError("episode_steps must be >= 1")

    @property
    def dt(self) -> float:
        m_t = math.sqrt(self.params.value("l") / self.params.value("g"))
        return m_t * CARTPOLE_DT_NONDIM

    def model(self):
        return cartpole_model(self.params)


@dataclass(frozen=True)
class RaceTask:
    params: QuantitySet
    track: Track
    x0: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, float))

    @property
    def dt(self) -> float:
        m_t = self.params.value("l") * self.params.value("c_r3")
        return m_t * RACECAR_DT_NONDIM

    @property
    def step_limit(self) -> int:
        return int(round(RACE_TIME_LIMIT_NONDIM / RACECAR_DT_NONDIM))


def make_cartpole_task(params: QuantitySet) -> CartpoleTask:
    return CartpoleTask(params=params)


def make_race_task(params: QuantitySet, track: Track | None = None) -> RaceTask:
    if track is None:
        track = desk_track(params.value("l"))
    return RaceTask(params=params, track=track)


def cartpole_family(
    l_values: Sequence[float],
) -> list[tuple[QuantitySet, ScalingTransform, CartpoleTask]]:
    """Dynamically similar cartpoles at the given pole lengths, matched from
    the reference system with mu_f and g held fixed."""
    reference = cartpole_quantities()
    model_dims = cartpole_model(reference)
    out = []
    for l in l_values:
        qs = match_similar_system(reference, fixed=("mu_f", "g"), new_values={"l": l})
        scaling = ScalingTransform.from_quantities(
            qs, model_dims.state_dims, model_dims.input_dims
        )
        out.append((qs, scaling, CartpoleTask(params=qs)))
    return out


def racecar_family(
    specs: Sequence[tuple[float, float]],
) -> list[tuple[QuantitySet, ScalingTransform, RaceTask]]:
    """Dynamically similar race cars at the given (length, mass) pairs; the
    drag shape constant c_r3 is held fixed and the desk track is scaled
    geometrically with the car."""
    reference = racecar_quantities()
    l_ref = reference.value("l")
    base_track = desk_track(l_ref)
    state_dims, input_dims = _racecar_du_dims()
    out = []
    for l, m in specs:
        qs = match_similar_system(
            reference, fixed=("c_r3",), new_values={"l": l, "m": m}
        )
        track = base_track.scaled(l / l_ref)
        scaling = ScalingTransform.from_quantities(qs, state_dims, input_dims)
        out.append((qs, scaling, RaceTask(params=qs, track=track)))
    return out


def _racecar_du_dims():
    from .dynamics import DIMLESS, LENGTH, VELOCITY
    from .dimensional import DimensionVector

    inv_time = DimensionVector([0, 0, -1])
    state = (LENGTH, LENGTH, DIMLESS, VELOCITY, DIMLESS, DIMLESS)
    inputs = (inv_time, inv_time)
    return state, inputs


def build_cartpole_problem(
    params: QuantitySet, weights=CARTPOLE_DEFAULT_WEIGHTS
) -> MpcProblem:
    """Dimensional cartpole MPC problem. ``weights`` are the five tunable
    dimensionless entries: stage diag on [xi, phi, xi', phi'] plus the input
    weight; the terminal weight is a fixed multiple of the stage weight."""
    weights = np.asarray(weights, float)
    if weights.shape != (5,):
        raise ValueError("expected 5 weights: state diag (4) + input (1)")
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")

    model = cartpole_model(params)
    scaling = ScalingTransform.from_quantities(
        params, model.state_dims, model.input_dims
    )
    dt = scaling.m_t * CARTPOLE_DT_NONDIM
    dyn = DiscretizedOde(model, dt)

    q_tilde = weights[:4]
    r_tilde = weights[4:5]
    Q = q_tilde / scaling.M_x**2
    R = r_tilde / scaling.M_u**2
    Q_N = CARTPOLE_TERMINAL_FACTOR * Q

    l = params.value("l")
    m_c = params.value("m_c")
    g = params.value("g")
    xi_max = 2.4 * (l / 0.8)
    f_max = 80.0 * (m_c * g / 9.81)
    inf = np.inf
    return MpcProblem(
        N=CARTPOLE_HORIZON,
        gamma=CARTPOLE_GAMMA,
        dynamics=dyn,
        Q=Q,
        R=R,
        Q_N=Q_N,
        x_ref=np.zeros(4),
        u_ref=np.zeros(1),
        x_lb=np.array([-xi_max, -inf, -inf, -inf]),
        x_ub=np.array([xi_max, inf, inf, inf]),
        u_lb=np.array([-f_max]),
        u_ub=np.array([f_max]),
        x_lb_N=np.array([-xi_max, -inf, -inf, -inf]),
        x_ub_N=np.array([xi_max, inf, inf, inf]),
        dt=dt,
        theta=("Q0", "Q1", "Q2", "Q3", "R0"),
        scaling=scaling,
    )


def cartpole_mdp(task: CartpoleTask) -> MdpInstance:
    """MDP form of the swing-up task (deterministic, gamma = 1)."""
    params = task.params
    l = params.value("l")
    m_c = params.value("m_c")
    g = params.value("g")
    inf = np.inf
    xi_max = 2.4 * (l / 0.8)
    f_max = 80.0 * (m_c * g / 9.81)
    return MdpInstance(
        model=task.model(),
        dt=task.dt,
        stage_cost=cartpole_stage_cost,
        gamma=CARTPOLE_GAMMA,
        x_lb=np.array([-xi_max, -inf, -inf, -inf]),
        x_ub=np.array([xi_max, inf, inf, inf]),
        u_lb=np.array([-f_max]),
        u_ub=np.array([f_max]),
        params=params,
    )


def _run_cartpole(task: CartpoleTask, policy) -> EpisodeResult:
    dyn = DiscretizedOde(task.model(), task.dt)
    n = task.episode_steps
    states = np.empty((n + 1, 4))
    inputs = np.empty((n, 1))
    costs = np.empty(n)
    x = task.x0.copy()
    states[0] = x
    for k in range(n):
        try:
            u = np.atleast_1d(np.asarray(policy(x), float))
        except Exception as exc:
            return EpisodeResult(
                states=states[: k + 1],
                inputs=inputs[:k],
                costs=costs[:k],
                objective=float(np.sum(costs[:k])),
                success=False,
                info={"failed_at_step": k, "error": str(exc)},
            )
        inputs[k] = u
        costs[k] = cartpole_stage_cost(x, u)
        x = dyn.step(x, u)
        states[k + 1] = x
    J = float(np.sum(costs))
    tail = states[-max(1, n // 5):, 1]
    success = bool(np.all(np.abs(_wrap_angle(tail)) < CARTPOLE_SUCCESS_ANGLE))
    return EpisodeResult(
        states=states,
        inputs=inputs,
        costs=costs,
        objective=J,
        success=success,
        info={"score": -J, "upright": success},
    )


def _run_race(task: RaceTask, policy) -> EpisodeResult:
    problem_dyn = DiscretizedOde(
        _race_du_model(task), task.dt
    )
    total = task.track.total_length
    limit = task.step_limit
    states = [task.x0.copy()]
    inputs = []
    x = task.x0.copy()
    lap_step = None
    for k in range(limit):
        try:
            u = np.atleast_1d(np.asarray(policy(x), float))
            x = problem_dyn.step(x, u)
        except Exception as exc:
            return EpisodeResult(
                states=np.array(states),
                inputs=np.array(inputs) if inputs else np.zeros((0, 2)),
                costs=task.dt * np.ones(len(inputs)),
                objective=task.dt * len(inputs),
                success=False,
                info={"failed_at_step": k, "error": str(exc), "lap": False},
            )
        inputs.append(u)
        states.append(x.copy())
        if x[0] >= total:
            lap_step = k + 1
            break
    states = np.array(states)
    inputs = np.array(inputs) if inputs else np.zeros((0, 2))
    n = len(inputs)
    costs = task.dt * np.ones(n)
    lap = lap_step is not None
    lap_time = lap_step * task.dt if lap else np.inf
    return EpisodeResult(
        states=states,
        inputs=inputs,
        costs=costs,
        objective=float(np.sum(costs)),
        success=lap,
        info={"lap": lap, "lap_time": lap_time, "steps": n},
    )


def _race_du_model(task: RaceTask):
    from .mpc import _racecar_delta_u_model

    return _racecar_delta_u_model(task.params, task.track)


def run_task(task, policy: Callable[[np.ndarray], np.ndarray]) -> EpisodeResult:
    """Closed-loop rollout of a task under a state-feedback policy."""
    if isinstance(task, CartpoleTask):
        return _run_cartpole(task, policy)
    if isinstance(task, RaceTask):
        return _run_race(task, policy)
    raise TypeError(f"unknown task type {type(task).__name__}")
