"""Continuous-time models, nondimensionalization of ODEs, fixed-step RK4
integration and closed-loop simulation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .dimensional import (
    DimensionVector,
    Quantity,
    QuantitySet,
    scaling_factor,
)

__all__ = [
    "OdeModel",
    "ScalingTransform",
    "Track",
    "IntegrationError",
    "OffTrackError",
    "nondimensionalize_ode",
    "rk4_step",
    "simulate",
    "cartpole_model",
    "racecar_model",
    "cartpole_quantities",
    "racecar_quantities",
    "desk_track",
    "load_track",
    "dump_track",
    "write_trajectory_csv",
]

# dimension vectors over (M, L, T)
DIMLESS = DimensionVector.zero(3)
MASS = DimensionVector([1, 0, 0])
LENGTH = DimensionVector([0, 1, 0])
TIME = DimensionVector([0, 0, 1])
VELOCITY = DimensionVector([0, 1, -1])
ANGVEL = DimensionVector([0, 0, -1])
FORCE = DimensionVector([1, 1, -2])


class IntegrationError(RuntimeError):
    """Non-finite right-hand side during integration."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class OffTrackError(RuntimeError):
    """Curvilinear projection singularity: |n| >= 1/|kappa|."""


@dataclass(frozen=True)
class OdeModel:
    """Parametrized ODE dx/dt = rhs(x, u, p) with per-component units.

    ``rhs`` must be vectorized over leading batch axes. ``kernel_id`` marks
    models with a compiled fast path (see ``_kernels``); ``kernel_args``
    carries the flat parameter/track arrays that path needs.
    """

    state_dims: tuple[DimensionVector, ...]
    input_dims: tuple[DimensionVector, ...]
    params: QuantitySet | None
    rhs: Callable[[np.ndarray, np.ndarray, Mapping[str, float]], np.ndarray]
    name: str = ""
    kernel_id: str | None = None
    kernel_args: tuple = ()
    # scaling applied on top of the kernel model (identity for dimensional)
    kernel_scale: tuple | None = None

    @property
    def nx(self) -> int:
        return len(self.state_dims)

    @property
    def nu(self) -> int:
        return len(self.input_dims)

    def eval(self, x, u):
        p = self.params.values() if self.params is not None else {}
        return self.rhs(np.asarray(x, dtype=float), np.asarray(u, dtype=float), p)


@dataclass(frozen=True)
class ScalingTransform:
    """Diagonal scaling factors mapping dimensionless variables to physical
    ones: x = M_x @ x_tilde, u = M_u @ u_tilde, t = m_t * t_tilde."""

    M_x: np.ndarray
    M_u: np.ndarray
    m_t: float
    M_d: np.ndarray | None = None
    M_h: np.ndarray | None = None
    m_L: float = 1.0
    m_T: float = 1.0
    m_cost: float = 1.0  # stage-cost unit of the MDP

    def __post_init__(self):
        object.__setattr__(self, "M_x", np.atleast_1d(np.asarray(self.M_x, float)))
        object.__setattr__(self, "M_u", np.atleast_1d(np.asarray(self.M_u, float)))
        if np.any(self.M_x <= 0) or np.any(self.M_u <= 0) or self.m_t <= 0:
            raise ValueError("scaling factors must be strictly positive")

    @classmethod
    def from_quantities(
        cls,
        qs: QuantitySet,
        state_dims: Sequence[DimensionVector],
        input_dims: Sequence[DimensionVector],
        cost_dim: DimensionVector | None = None,
    ) -> "ScalingTransform":
        M_x = np.array([scaling_factor(d, qs) for d in state_dims])
        M_u = np.array([scaling_factor(d, qs) for d in input_dims])
        m_t = scaling_factor(TIME, qs)
        m_cost = scaling_factor(cost_dim, qs) if cost_dim is not None else 1.0
        return cls(M_x=M_x, M_u=M_u, m_t=m_t, m_cost=m_cost)

    @classmethod
    def identity(cls, nx: int, nu: int) -> "ScalingTransform":
        return cls(M_x=np.ones(nx), M_u=np.ones(nu), m_t=1.0)


def nondimensionalize_ode(model: OdeModel, scaling: ScalingTransform) -> OdeModel:
    """Wrap the model rhs as f_tilde(x, u) = m_t * M_x^-1 f(M_x x, M_u u; p)."""
    if len(scaling.M_x) != model.nx or len(scaling.M_u) != model.nu:
        raise ValueError("scaling diagonals do not match model signature")
    M_x, M_u, m_t = scaling.M_x, scaling.M_u, scaling.m_t
    base = model.rhs

    def rhs(x, u, p):
        return (m_t / M_x) * base(x * M_x, u * M_u, p)

    prev = model.kernel_scale or (np.ones(model.nx), np.ones(model.nu), 1.0)
    kscale = (prev[0] * M_x, prev[1] * M_u, prev[2] * m_t)
    zero = DimensionVector.zero(len(model.state_dims[0]))
    return replace(
        model,
        state_dims=(zero,) * model.nx,
        input_dims=(zero,) * model.nu,
        rhs=rhs,
        name=model.name + "~" if model.name else "",
        kernel_scale=kscale,
    )


def rk4_step(model: OdeModel, x, u, dt: float) -> np.ndarray:
    """Classical 4th-order Runge-Kutta step with constant input."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    k1 = model.eval(x, u)
    k2 = model.eval(x + 0.5 * dt * k1, u)
    k3 = model.eval(x + 0.5 * dt * k2, u)
    k4 = model.eval(x + dt * k3, u)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite state after RK4 step", state=x)
    return out


def simulate(
    model: OdeModel,
    policy: Callable[[np.ndarray], np.ndarray],
    x0,
    dt: float,
    n_steps: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold rollout; returns (n_steps+1, nx) states and
    (n_steps, nu) inputs."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = np.asarray(x0, dtype=float)
    states = np.empty((n_steps + 1, model.nx))
    inputs = np.empty((n_steps, model.nu))
    states[0] = x
    for k in range(n_steps):
        try:
            u = np.atleast_1d(np.asarray(policy(x), dtype=float))
        except Exception as exc:
            raise RuntimeError(f"policy failed at step {k}") from exc
        inputs[k] = u
        x = rk4_step(model, x, u, dt)
        states[k + 1] = x
    return states, inputs


# --------------------------------------------------------------------------
# cartpole
# --------------------------------------------------------------------------

def cartpole_quantities(
    m_c: float = 1.0,
    m_p: float = 0.1,
    l: float = 0.8,
    mu_f: float = 0.1,
    g: float = 9.81,
) -> QuantitySet:
    """Cartpole parameter set; repeating variables are {m_c, l, g}."""
    return QuantitySet(
        (
            Quantity("m_c", m_c, MASS),
            Quantity("m_p", m_p, MASS),
            Quantity("l", l, LENGTH),
            Quantity("mu_f", mu_f, DimensionVector([1, 0, -1])),
            Quantity("g", g, DimensionVector([0, 1, -2])),
        ),
        repeating=("m_c", "l", "g"),
    )


def _cartpole_rhs(x, u, p):
    xi_dot = x[..., 2]
    phi = x[..., 1]
    phi_dot = x[..., 3]
    force = u[..., 0]
    m_c, m_p, l, mu_f, g = p["m_c"], p["m_p"], p["l"], p["mu_f"], p["g"]
    sin = np.sin(phi)
    cos = np.cos(phi)
    denom = m_c + m_p * sin**2
    xi_dd = (force - mu_f * xi_dot + m_p * sin * (l * phi_dot**2 - g * cos)) / denom
    phi_dd = (g * sin - xi_dd * cos) / l
    return np.stack([xi_dot, phi_dot, xi_dd, phi_dd], axis=-1)


def cartpole_model(params: QuantitySet) -> OdeModel:
    """Cart-pendulum with viscous cart friction. State [xi, phi, xi', phi'],
    input [F]; phi = 0 is upright, the swing-up starts hanging at phi = pi."""
    for name in ("m_c", "m_p", "l"):
        if params.value(name) <= 0:
            raise ValueError(f"cartpole parameter {name} must be positive")
    pvals = np.array([params.value(n) for n in ("m_c", "m_p", "l", "mu_f", "g")])
    return OdeModel(
        state_dims=(LENGTH, DIMLESS, VELOCITY, ANGVEL),
        input_dims=(FORCE,),
        params=params,
        rhs=_cartpole_rhs,
        name="cartpole",
        kernel_id="cartpole",
        kernel_args=(pvals,),
    )


# --------------------------------------------------------------------------
# race car
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Track:
    """Closed circuit of straights and constant-curvature arcs."""

    segments: tuple[tuple[float, float], ...]  # (arc length [m], curvature [1/m])
    half_width: float

    def __post_init__(self):
        object.__setattr__(
            self, "segments", tuple((float(a), float(k)) for a, k in self.segments)
        )
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if any(a <= 0 for a, _ in self.segments):
            raise ValueError("segment lengths must be positive")
        heading = sum(a * k for a, k in self.segments)
        if abs(abs(heading) - 2.0 * math.pi) > 1e-9 * max(1.0, abs(heading)) + 1e-9:
            raise ValueError(
                f"track is not a closed loop: total heading change {heading:.6f}"
            )

    @property
    def total_length(self) -> float:
        return sum(a for a, _ in self.segments)

    def _arrays(self) -> tuple[np.ndarray, np.ndarray]:
        ends = np.cumsum([a for a, _ in self.segments])
        curv = np.array([k for _, k in self.segments])
        return ends, curv

    def curvature(self, sigma) -> np.ndarray:
        """Piecewise-constant curvature at arc position sigma (wraps)."""
        ends, curv = self._arrays()
        s = np.mod(np.asarray(sigma, dtype=float), self.total_length)
        idx = np.searchsorted(ends, s, side="right")
        idx = np.minimum(idx, len(curv) - 1)
        return curv[idx]

    def scaled(self, ratio: float) -> "Track":
        """Geometrically similar track: lengths * ratio, curvatures / ratio."""
        return Track(
            tuple((a * ratio, k / ratio) for a, k in self.segments),
            self.half_width * ratio,
        )


def desk_track(car_length: float) -> Track:
    """Default circuit: two 20-car-length straights and two 180-degree arcs
    of radius 6 car-lengths; half-width 1.5 car-lengths."""
    l = car_length
    radius = 6.0 * l
    arc = math.pi * radius
    return Track(
        (
            (20.0 * l, 0.0),
            (arc, 1.0 / radius),
            (20.0 * l, 0.0),
            (arc, 1.0 / radius),
        ),
        half_width=1.5 * l,
    )


def racecar_quantities(
    m: float = 0.043,
    l: float = 0.06,
    l_r: float = 0.017,
    c_m1: float = 0.28,
    c_m2: float = 0.05,
    c_r0: float = 0.011,
    c_r2: float = 0.006,
    c_r3: float = 5.0,
) -> QuantitySet:
    """Race car parameter set; repeating variables are {m, l, c_r3}."""
    return QuantitySet(
        (
            Quantity("m", m, MASS),
            Quantity("l", l, LENGTH),
            Quantity("l_r", l_r, LENGTH),
            Quantity("c_m1", c_m1, FORCE),
            Quantity("c_m2", c_m2, DimensionVector([1, 0, -1])),
            Quantity("c_r0", c_r0, FORCE),
            Quantity("c_r2", c_r2, DimensionVector([1, -1, 0])),
            Quantity("c_r3", c_r3, DimensionVector([0, -1, 1])),
        ),
        repeating=("m", "l", "c_r3"),
    )


def _racecar_rhs_factory(track: Track):
    ends, curv = track._arrays()
    total = track.total_length

    def rhs(x, u, p):
        sigma, n, alpha, v = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
        D, delta = u[..., 0], u[..., 1]
        m, l, l_r = p["m"], p["l"], p["l_r"]
        c_m1, c_m2, c_r0, c_r2, c_r3 = (
            p["c_m1"], p["c_m2"], p["c_r0"], p["c_r2"], p["c_r3"],
        )
        s = np.mod(sigma, total)
        idx = np.minimum(np.searchsorted(ends, s, side="right"), len(curv) - 1)
        kappa = curv[idx]
        denom = 1.0 - n * kappa
        if np.any(denom <= 0.0):
            raise OffTrackError("curvilinear projection singularity: n*kappa >= 1")
        beta = alpha + (l_r / l) * delta
        sigma_dot = v * np.cos(beta) / denom
        n_dot = v * np.sin(beta)
        alpha_dot = (v / l) * delta - kappa * sigma_dot
        v_dot = (
            (c_m1 - c_m2 * v) * D - c_r0 * np.tanh(c_r3 * v) - c_r2 * v**2
        ) / m
        return np.stack([sigma_dot, n_dot, alpha_dot, v_dot], axis=-1)

    return rhs


def racecar_model(params: QuantitySet, track: Track) -> OdeModel:
    """Curvilinear race car. State [sigma, n, alpha, v], inputs [D, delta]."""
    ends, curv = track._arrays()
    pvals = np.array(
        [params.value(n) for n in ("m", "l", "l_r", "c_m1", "c_m2", "c_r0", "c_r2", "c_r3")]
    )
    return OdeModel(
        state_dims=(LENGTH, LENGTH, DIMLESS, VELOCITY),
        input_dims=(DIMLESS, DIMLESS),
        params=params,
        rhs=_racecar_rhs_factory(track),
        name="racecar",
        kernel_id="racecar",
        kernel_args=(pvals, ends, curv, track.total_length),
    )


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------

def load_track(path) -> Track:
    with open(path) as f:
        data = json.load(f)
    return Track(
        tuple((s["length"], s["curvature"]) for s in data["segments"]),
        data["half_width"],
    )


def dump_track(track: Track) -> dict:
    return {
        "segments": [{"length": a, "curvature": k} for a, k in track.segments],
        "half_width": track.half_width,
    }


def write_trajectory_csv(path, states: np.ndarray, inputs: np.ndarray, dt: float):
    """CSV with header t,x0,...,u0,...; the final row pads inputs with nan."""
    n_steps, nu = inputs.shape
    nx = states.shape[1]
    header = ",".join(
        ["t"] + [f"x{i}" for i in range(nx)] + [f"u{i}" for i in range(nu)]
    )
    rows = []
    for k in range(n_steps + 1):
        u = inputs[k] if k < n_steps else np.full(nu, np.nan)
        rows.append(np.concatenate([[k * dt], states[k], u]))
    np.savetxt(path, np.array(rows), delimiter=",", header=header, comments="")
