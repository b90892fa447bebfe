"""Discrete-time MDPs built from ODE models, their dimensionless versions,
Gaussian disturbance transforms, similarity checking and closed-loop
objective evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .dimensional import QuantitySet, pi_distance
from .dynamics import OdeModel, ScalingTransform, nondimensionalize_ode
from .mpc import DiscretizedOde

__all__ = [
    "MdpInstance",
    "EpisodeResult",
    "CovarianceError",
    "EpisodeError",
    "StructureError",
    "nondimensionalize_mdp",
    "transform_gaussian",
    "check_similarity",
    "evaluate_policy_objective",
    "result_to_dict",
]

SIMILARITY_GRID = 64  # deterministic sample points per dimension range
SIMILARITY_TOL = 1e-9


class CovarianceError(ValueError):
    """Disturbance covariance is not symmetric positive semidefinite."""


class EpisodeError(RuntimeError):
    """Policy or transition failure during an episode rollout."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class StructureError(ValueError):
    """MDPs cannot be compared: incompatible signatures."""


def _check_psd(sigma: np.ndarray) -> np.ndarray:
    sigma = np.asarray(sigma, float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise CovarianceError("covariance must be a square matrix")
    if not np.allclose(sigma, sigma.T, atol=1e-12):
        raise CovarianceError("covariance must be symmetric")
    eigvals = np.linalg.eigvalsh(sigma)
    if eigvals.min(initial=0.0) < -1e-12 * max(1.0, abs(eigvals.max(initial=0.0))):
        raise CovarianceError("covariance must be positive semidefinite")
    return sigma


@dataclass(frozen=True)
class MdpInstance:
    """Discrete-time MDP with box spaces, transition s+ = F(s, a) + d built
    from an ODE model integrated over ``dt``, a stage cost with unit
    ``cost_unit``, and discount ``gamma``. ``noise_mu``/``noise_sigma`` define
    an optional additive Gaussian disturbance on the successor state."""

    model: OdeModel
    dt: float
    stage_cost: Callable[[np.ndarray, np.ndarray], float]
    gamma: float
    x_lb: np.ndarray
    x_ub: np.ndarray
    u_lb: np.ndarray
    u_ub: np.ndarray
    cost_unit: float = 1.0
    noise_mu: np.ndarray | None = None
    noise_sigma: np.ndarray | None = None
    params: QuantitySet | None = None
    n_substeps: int = 1
    _stepper: DiscretizedOde = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("x_lb", "x_ub", "u_lb", "u_ub"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float))
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if np.any(self.x_lb > self.x_ub) or np.any(self.u_lb > self.u_ub):
            raise ValueError("lower bounds exceed upper bounds")
        if self.noise_sigma is not None:
            object.__setattr__(self, "noise_sigma", _check_psd(self.noise_sigma))
        if self.noise_mu is not None:
            object.__setattr__(self, "noise_mu", np.asarray(self.noise_mu, float))
        object.__setattr__(
            self, "_stepper", DiscretizedOde(self.model, self.dt, self.n_substeps)
        )

    @property
    def nx(self) -> int:
        return self.model.nx

    @property
    def nu(self) -> int:
        return self.model.nu

    @property
    def deterministic(self) -> bool:
        return self.noise_sigma is None and self.noise_mu is None

    def transition(self, s, a, d=None) -> np.ndarray:
        s_next = self._stepper.step(s, a)
        if d is not None:
            s_next = s_next + d
        return s_next

    def sample_disturbance(self, rng: np.random.Generator) -> np.ndarray | None:
        if self.deterministic:
            return None
        mu = self.noise_mu if self.noise_mu is not None else np.zeros(self.nx)
        if self.noise_sigma is None:
            return mu
        return rng.multivariate_normal(mu, self.noise_sigma)


@dataclass
class EpisodeResult:
    states: np.ndarray
    inputs: np.ndarray
    costs: np.ndarray
    objective: float
    success: bool = True
    info: dict = field(default_factory=dict)


def result_to_dict(result: EpisodeResult, trajectory_path: str | None = None) -> dict:
    data = {
        "objective": float(result.objective),
        "costs": [float(c) for c in result.costs],
        "success": bool(result.success),
        "info": {
            k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
            for k, v in result.info.items()
        },
    }
    if trajectory_path is not None:
        data["trajectory"] = str(trajectory_path)
    return data


def transform_gaussian(mu, sigma, M_d) -> tuple[np.ndarray, np.ndarray]:
    """Distribution of M_d^-1 (mu + noise): returns (M_d^-1 mu,
    M_d^-1 Sigma M_d^-T) for a positive diagonal M_d."""
    mu = np.asarray(mu, float)
    sigma = _check_psd(sigma)
    M_d = np.atleast_1d(np.asarray(M_d, float))
    if M_d.ndim == 2:
        M_d = np.diag(M_d)
    if np.any(M_d <= 0):
        raise ValueError("M_d must be a positive diagonal")
    inv = 1.0 / M_d
    return inv * mu, (inv[:, None] * sigma) * inv[None, :]


def nondimensionalize_mdp(mdp: MdpInstance, scaling: ScalingTransform) -> MdpInstance:
    """Dimensionless MDP: scaled transition, spaces divided by the scaling
    diagonals, stage cost divided by its unit, sampling time dt / m_t."""
    M_x, M_u = scaling.M_x, scaling.M_u
    if len(M_x) != mdp.nx or len(M_u) != mdp.nu:
        raise ValueError("scaling diagonals do not match MDP signature")
    base_cost = mdp.stage_cost
    m_cost = scaling.m_cost

    def stage_cost(s, a):
        return base_cost(np.asarray(s, float) * M_x, np.asarray(a, float) * M_u) / m_cost

    noise_mu, noise_sigma = mdp.noise_mu, mdp.noise_sigma
    if not mdp.deterministic:
        mu = noise_mu if noise_mu is not None else np.zeros(mdp.nx)
        sig = noise_sigma if noise_sigma is not None else np.zeros((mdp.nx, mdp.nx))
        noise_mu, noise_sigma = transform_gaussian(mu, sig, M_x)

    return replace(
        mdp,
        model=nondimensionalize_ode(mdp.model, scaling),
        dt=mdp.dt / scaling.m_t,
        stage_cost=stage_cost,
        x_lb=mdp.x_lb / M_x,
        x_ub=mdp.x_ub / M_x,
        u_lb=mdp.u_lb / M_u,
        u_ub=mdp.u_ub / M_u,
        cost_unit=1.0,
        noise_mu=noise_mu,
        noise_sigma=noise_sigma,
    )


def _bound_gap(a_lb, a_ub, b_lb, b_ub) -> float:
    """Largest disagreement between two sets of box bounds; infinities must
    match exactly, finite entries are compared numerically."""
    gap = 0.0
    for x, y in ((a_lb, b_lb), (a_ub, b_ub)):
        inf_x, inf_y = ~np.isfinite(x), ~np.isfinite(y)
        if np.any(inf_x != inf_y):
            return np.inf
        fin = ~inf_x
        if fin.any():
            gap = max(gap, float(np.abs(x[fin] - y[fin]).max()))
    return gap


def _grid(lb: np.ndarray, ub: np.ndarray, n: int) -> np.ndarray:
    """n deterministic sample vectors sweeping each dimension's range
    simultaneously; unbounded dimensions sweep [-1, 1]."""
    lo = np.where(np.isfinite(lb), lb, -1.0)
    hi = np.where(np.isfinite(ub), ub, 1.0)
    t = np.linspace(0.0, 1.0, n)[:, None]
    return lo + t * (hi - lo)


def check_similarity(
    a: MdpInstance, b: MdpInstance, tol: float = SIMILARITY_TOL
) -> dict:
    """Report whether two dimensional MDPs share the same dimensionless form.

    Both MDPs must carry parameter QuantitySets with identical names and
    repeating designations. The dimensionless stage costs are compared on a
    deterministic grid of SIMILARITY_GRID points per dimension range."""
    if a.params is None or b.params is None:
        raise StructureError("both MDPs must carry parameter QuantitySets")
    if a.params.names != b.params.names or a.nx != b.nx or a.nu != b.nu:
        raise StructureError("MDPs have incomparable signatures")

    dist = pi_distance(a.params, b.params)

    sc_a = ScalingTransform.from_quantities(
        a.params, a.model.state_dims, a.model.input_dims
    )
    sc_b = ScalingTransform.from_quantities(
        b.params, b.model.state_dims, b.model.input_dims
    )
    sc_a = replace(sc_a, m_cost=a.cost_unit)
    sc_b = replace(sc_b, m_cost=b.cost_unit)
    da = nondimensionalize_mdp(a, sc_a)
    db = nondimensionalize_mdp(b, sc_b)

    space_mismatch = max(
        _bound_gap(da.x_lb, da.x_ub, db.x_lb, db.x_ub),
        _bound_gap(da.u_lb, da.u_ub, db.u_lb, db.u_ub),
    )

    S = _grid(da.x_lb, da.x_ub, SIMILARITY_GRID)
    A = _grid(da.u_lb, da.u_ub, SIMILARITY_GRID)
    cost_mismatch = 0.0
    for s, u in zip(S, A):
        cost_mismatch = max(
            cost_mismatch, abs(float(da.stage_cost(s, u)) - float(db.stage_cost(s, u)))
        )

    dt_mismatch = abs(da.dt - db.dt)
    similar = (
        dist <= tol
        and space_mismatch <= tol
        and cost_mismatch <= tol
        and dt_mismatch <= tol
        and a.gamma == b.gamma
    )
    return {
        "similar": bool(similar),
        "pi_distance": float(dist),
        "space_mismatch": float(space_mismatch),
        "cost_mismatch": float(cost_mismatch),
        "dt_mismatch": float(dt_mismatch),
    }


def evaluate_policy_objective(
    mdp: MdpInstance,
    policy: Callable[[np.ndarray], np.ndarray],
    x0,
    n_steps: int,
    seed: int = 0,
) -> EpisodeResult:
    """Discounted cost sum along a closed-loop rollout; disturbances (if any)
    are drawn deterministically from the seed."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng = np.random.default_rng(seed)
    x = np.asarray(x0, float)
    states = np.empty((n_steps + 1, mdp.nx))
    inputs = np.empty((n_steps, mdp.nu))
    costs = np.empty(n_steps)
    states[0] = x
    J = 0.0
    for t in range(n_steps):
        try:
            a = np.atleast_1d(np.asarray(policy(x), float))
        except Exception as exc:
            raise EpisodeError(f"policy failed at step {t}", step=t) from exc
        c = float(mdp.stage_cost(x, a))
        costs[t] = c
        J += mdp.gamma**t * c
        inputs[t] = a
        try:
            x = mdp.transition(x, a, mdp.sample_disturbance(rng))
        except Exception as exc:
            raise EpisodeError(f"transition failed at step {t}", step=t) from exc
        if not np.all(np.isfinite(x)):
            raise EpisodeError(f"non-finite state at step {t}", step=t)
        states[t + 1] = x
    return EpisodeResult(
        states=states, inputs=inputs, costs=costs, objective=float(J)
    )
