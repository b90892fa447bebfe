"""Parametrized discounted nonlinear MPC with a multiple-shooting SQP solver
(Gauss-Newton Hessian, active-set box QP), plus its nondimensionalized
counterpart acting as a scale-invariant policy."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .dimensional import QuantitySet
from .dynamics import (
    DIMLESS,
    LENGTH,
    VELOCITY,
    OdeModel,
    ScalingTransform,
    Track,
    DimensionVector,
    nondimensionalize_ode,
    racecar_model,
)
from .qp import solve_box_qp

__all__ = [
    "MpcProblem",
    "MpcSolution",
    "SolverError",
    "DivergenceError",
    "DiscretizedOde",
    "LinearDiscreteDynamics",
    "solve",
    "cost_gradient",
    "build_condensed_qp",
    "nondimensionalize_mpc",
    "dimensionless_policy",
    "DimensionlessMpcPolicy",
    "build_racecar_delta_u_problem",
    "problem_to_dict",
    "problem_from_dict",
]

KKT_TOL = 1e-7
MAX_SQP_ITER = 50
SLACK_WEIGHT = 1e5  # dimensionless L2 penalty on state-box violations
FD_EPS = 2e-5


class SolverError(RuntimeError):
    pass


class DivergenceError(SolverError):
    pass


# --------------------------------------------------------------------------
# discrete-time prediction models
# --------------------------------------------------------------------------

class LinearDiscreteDynamics:
    """x+ = A x + B u with exact sensitivities."""

    def __init__(self, A: np.ndarray, B: np.ndarray):
        self.A = np.asarray(A, float)
        self.B = np.asarray(B, float)

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]

    def step(self, x, u):
        return x @ self.A.T + u @ self.B.T

    def jacobians(self, X, U):
        n = X.shape[0]
        return (
            np.broadcast_to(self.A, (n, *self.A.shape)),
            np.broadcast_to(self.B, (n, *self.B.shape)),
        )

    def nondimensionalize(self, scaling: ScalingTransform) -> "LinearDiscreteDynamics":
        Mx, Mu = scaling.M_x, scaling.M_u
        return LinearDiscreteDynamics(
            (self.A * Mx) / Mx[:, None], (self.B * Mu) / Mx[:, None]
        )


class DiscretizedOde:
    """Fixed-step RK4 discretization of an OdeModel, with finite-difference
    sensitivities. Uses the compiled kernel backend when the model has one."""

    def __init__(self, model: OdeModel, dt: float, n_substeps: int = 1):
        if dt <= 0 or n_substeps < 1:
            raise ValueError("dt must be positive and n_substeps >= 1")
        self.model = model
        self.dt = float(dt)
        self.n_substeps = int(n_substeps)
        self._kernel = _bind_kernel(model)

    @property
    def nx(self) -> int:
        return self.model.nx

    @property
    def nu(self) -> int:
        return self.model.nu

    def step(self, x, u):
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        h = self.dt / self.n_substeps
        if self._kernel is not None:
            squeeze = x.ndim == 1
            xb = np.atleast_2d(x)
            ub = np.atleast_2d(u)
            out = self._kernel(xb, ub, h, self.n_substeps)
            return out[0] if squeeze else out
        for _ in range(self.n_substeps):
            k1 = self.model.eval(x, u)
            k2 = self.model.eval(x + 0.5 * h * k1, u)
            k3 = self.model.eval(x + 0.5 * h * k2, u)
            k4 = self.model.eval(x + h * k3, u)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return x

    def jacobians(self, X, U):
        """Central-difference sensitivities along a trajectory batch."""
        X = np.atleast_2d(np.asarray(X, float))
        U = np.atleast_2d(np.asarray(U, float))
        n, nx = X.shape
        nu = U.shape[1]
        A = np.empty((n, nx, nx))
        B = np.empty((n, nx, nu))
        for i in range(nx):
            h = FD_EPS * (1.0 + np.abs(X[:, i]))
            Xp = X.copy()
            Xm = X.copy()
            Xp[:, i] += h
            Xm[:, i] -= h
            A[:, :, i] = (self.step(Xp, U) - self.step(Xm, U)) / (2.0 * h[:, None])
        for j in range(nu):
            h = FD_EPS * (1.0 + np.abs(U[:, j]))
            Up = U.copy()
            Um = U.copy()
            Up[:, j] += h
            Um[:, j] -= h
            B[:, :, j] = (self.step(X, Up) - self.step(X, Um)) / (2.0 * h[:, None])
        return A, B

    def nondimensionalize(self, scaling: ScalingTransform) -> "DiscretizedOde":
        return DiscretizedOde(
            nondimensionalize_ode(self.model, scaling),
            self.dt / scaling.m_t,
            self.n_substeps,
        )


def _bind_kernel(model: OdeModel):
    if model.kernel_id is None:
        return None
    from . import _kernels

    return _kernels.bind(model.kernel_id, model.kernel_args, model.kernel_scale)


# --------------------------------------------------------------------------
# problem definition
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MpcProblem:
    N: int
    gamma: float
    dynamics: object  # DiscretizedOde or LinearDiscreteDynamics
    Q: np.ndarray  # diagonal stage weights
    R: np.ndarray
    Q_N: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    x_lb: np.ndarray
    x_ub: np.ndarray
    u_lb: np.ndarray
    u_ub: np.ndarray
    x_lb_N: np.ndarray
    x_ub_N: np.ndarray
    dt: float
    theta: tuple[str, ...] = ()
    reference_fn: Callable | None = None
    scaling: ScalingTransform | None = None

    def __post_init__(self):
        for name in ("Q", "R", "Q_N", "x_ref", "u_ref", "x_lb", "x_ub",
                     "u_lb", "u_ub", "x_lb_N", "x_ub_N"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float))
        if self.N < 1:
            raise ValueError("horizon must be >= 1")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if np.any(self.Q < 0) or np.any(self.R < 0) or np.any(self.Q_N < 0):
            raise ValueError("weights must be nonnegative")
        if (np.any(self.x_lb > self.x_ub) or np.any(self.u_lb > self.u_ub)
                or np.any(self.x_lb_N > self.x_ub_N)):
            raise ValueError("lower bounds exceed upper bounds")

    @property
    def nx(self) -> int:
        return len(self.x_ref)

    @property
    def nu(self) -> int:
        return len(self.u_ref)

    def weight_names(self) -> tuple[str, ...]:
        return (
            tuple(f"Q{i}" for i in range(self.nx))
            + tuple(f"R{j}" for j in range(self.nu))
            + tuple(f"QN{i}" for i in range(self.nx))
        )

    def with_weights(self, values: Mapping[str, float]) -> "MpcProblem":
        Q, R, Q_N = self.Q.copy(), self.R.copy(), self.Q_N.copy()
        for name, v in values.items():
            if name.startswith("QN"):
                Q_N[int(name[2:])] = v
            elif name.startswith("Q"):
                Q[int(name[1:])] = v
            elif name.startswith("R"):
                R[int(name[1:])] = v
            else:
                raise KeyError(f"unknown weight entry {name!r}")
        return replace(self, Q=Q, R=R, Q_N=Q_N)


@dataclass
class MpcSolution:
    x_traj: np.ndarray
    u_traj: np.ndarray
    u0: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    state_violation: float = 0.0


# --------------------------------------------------------------------------
# cost assembly
# --------------------------------------------------------------------------

def _stage_weights(problem: MpcProblem) -> np.ndarray:
    return problem.gamma ** np.arange(problem.N + 1)


def _resolve_refs(problem: MpcProblem, s_t) -> tuple[np.ndarray, np.ndarray]:
    if problem.reference_fn is not None:
        x_ref, u_ref = problem.reference_fn(np.asarray(s_t, float))
        return np.asarray(x_ref, float), np.asarray(u_ref, float)
    return problem.x_ref, problem.u_ref


def _hinge(x, lb, ub):
    return np.maximum(0.0, x - ub) + np.minimum(0.0, x - lb)


def problem_cost(problem: MpcProblem, X, U, refs=None) -> tuple[float, float]:
    """Nonlinear objective on a (multiple-shooting) iterate, including the
    L2 slack penalty on state boxes. Returns (cost, max state violation)."""
    x_ref, u_ref = refs if refs is not None else (problem.x_ref, problem.u_ref)
    g = _stage_weights(problem)
    cost = 0.0
    viol = 0.0
    for k in range(problem.N):
        dx = X[k] - x_ref
        du = U[k] - u_ref
        h = _hinge(X[k], problem.x_lb, problem.x_ub)
        cost += g[k] * (
            dx @ (problem.Q * dx)
            + du @ (problem.R * du)
            + SLACK_WEIGHT * (h @ h)
        )
        viol = max(viol, float(np.abs(h).max(initial=0.0)))
    dx = X[problem.N] - x_ref
    h = _hinge(X[problem.N], problem.x_lb_N, problem.x_ub_N)
    cost += g[problem.N] * (dx @ (problem.Q_N * dx) + SLACK_WEIGHT * (h @ h))
    viol = max(viol, float(np.abs(h).max(initial=0.0)))
    return float(cost), viol


def build_condensed_qp(problem: MpcProblem, X, U, s_t, refs=None):
    """Linearize the multiple-shooting problem around (X, U) and condense the
    state deviations, returning (H, g, E, e) of the QP over the stacked input
    step dU: min 0.5 dU' H dU + g' dU."""
    N, nx, nu = problem.N, problem.nx, problem.nu
    x_ref, u_ref = refs if refs is not None else (problem.x_ref, problem.u_ref)
    dyn = problem.dynamics
    A, B = dyn.jacobians(X[:-1], U)
    pred = dyn.step(X[:-1], U)
    defects = pred - X[1:]

    E = np.zeros((N + 1, nx, N * nu))
    e = np.zeros((N + 1, nx))
    e[0] = np.asarray(s_t, float) - X[0]
    for k in range(N):
        E[k + 1] = A[k] @ E[k]
        E[k + 1][:, k * nu:(k + 1) * nu] += B[k]
        e[k + 1] = A[k] @ e[k] + defects[k]

    g = _stage_weights(problem)
    H = np.zeros((N * nu, N * nu))
    grad = np.zeros(N * nu)
    for k in range(N + 1):
        xk = X[k] + e[k]
        if k < N:
            Qd, lb, ub = problem.Q, problem.x_lb, problem.x_ub
        else:
            Qd, lb, ub = problem.Q_N, problem.x_lb_N, problem.x_ub_N
        active = ((xk > ub) | (xk < lb)).astype(float)
        W = Qd + SLACK_WEIGHT * active
        res = Qd * (xk - x_ref) + SLACK_WEIGHT * _hinge(xk, lb, ub)
        H += 2.0 * g[k] * (E[k].T * W) @ E[k]
        grad += 2.0 * g[k] * (E[k].T @ res)
        if k < N:
            sl = slice(k * nu, (k + 1) * nu)
            H[sl, sl] += 2.0 * g[k] * np.diag(problem.R)
            grad[sl] += 2.0 * g[k] * (problem.R * (U[k] - u_ref))
    return H, grad, E, e, defects


def cost_gradient(problem: MpcProblem, s_t, U) -> np.ndarray:
    """Gauss-Newton gradient of the closed-form objective w.r.t. the stacked
    input sequence, evaluated on the dynamically consistent rollout."""
    U = np.asarray(U, float).reshape(problem.N, problem.nu)
    X = rollout(problem, s_t, U)
    refs = _resolve_refs(problem, s_t)
    _, grad, _, _, _ = build_condensed_qp(problem, X, U, s_t, refs)
    return grad


def rollout(problem: MpcProblem, s_t, U) -> np.ndarray:
    X = np.empty((problem.N + 1, problem.nx))
    X[0] = np.asarray(s_t, float)
    for k in range(problem.N):
        X[k + 1] = problem.dynamics.step(X[k], U[k])
    return X


# --------------------------------------------------------------------------
# SQP solver
# --------------------------------------------------------------------------

def solve(
    problem: MpcProblem,
    s_t,
    warm_start: MpcSolution | None = None,
    tol: float = KKT_TOL,
    max_iter: int = MAX_SQP_ITER,
) -> MpcSolution:
    """Local solution by multiple shooting + Gauss-Newton SQP. Input boxes
    are enforced exactly; state boxes enter through the L2 slack penalty."""
    s_t = np.asarray(s_t, float)
    if not np.all(np.isfinite(s_t)):
        raise SolverError("non-finite initial state")
    N, nx, nu = problem.N, problem.nx, problem.nu
    refs = _resolve_refs(problem, s_t)

    if warm_start is not None:
        U = np.vstack([warm_start.u_traj[1:], warm_start.u_traj[-1:]])
        X = np.vstack([[s_t], warm_start.x_traj[2:], warm_start.x_traj[-1:]])
    else:
        U = np.zeros((N, nu))
        X = rollout(problem, s_t, U)
    U = np.clip(U, problem.u_lb, problem.u_ub)

    kkt = np.inf
    converged = False
    iterations = 0
    for it in range(max_iter):
        iterations = it + 1
        H, grad, E, e, defects = build_condensed_qp(problem, X, U, s_t, refs)

        # projected-gradient stationarity on the input box
        pg = grad.copy().reshape(N, nu)
        at_lb = U <= problem.u_lb + 1e-12
        at_ub = U >= problem.u_ub - 1e-12
        pg[at_lb] = np.minimum(pg[at_lb], 0.0)
        pg[at_ub] = np.maximum(pg[at_ub], 0.0)
        kkt = max(
            float(np.abs(pg).max(initial=0.0)),
            float(np.abs(defects).max(initial=0.0)),
            float(np.abs(e[0]).max(initial=0.0)),
        )
        if kkt < tol:
            converged = True
            break

        lb = (problem.u_lb - U).ravel()
        ub = (problem.u_ub - U).ravel()
        dU = solve_box_qp(H + 1e-12 * np.eye(N * nu), grad, lb, ub)
        dX = e + E @ dU
        U = np.clip(U + dU.reshape(N, nu), problem.u_lb, problem.u_ub)
        X = X + dX
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(U))):
            raise DivergenceError("non-finite SQP iterate")

    objective, violation = problem_cost(problem, X, U, refs)
    return MpcSolution(
        x_traj=X,
        u_traj=U,
        u0=U[0].copy(),
        objective=objective,
        kkt_residual=kkt,
        iterations=iterations,
        converged=converged,
        state_violation=violation,
    )


# --------------------------------------------------------------------------
# nondimensionalization
# --------------------------------------------------------------------------

def nondimensionalize_mpc(problem: MpcProblem, scaling: ScalingTransform) -> MpcProblem:
    """Dimensionless MPC problem: scaled dynamics, weights, references and
    bounds; the sampling time becomes dt / m_t."""
    Mx, Mu = scaling.M_x, scaling.M_u
    if len(Mx) != problem.nx or len(Mu) != problem.nu:
        raise ValueError("scaling diagonals do not match problem signature")

    ref_fn = None
    if problem.reference_fn is not None:
        base_fn = problem.reference_fn

        def ref_fn(s_tilde):
            x_ref, u_ref = base_fn(np.asarray(s_tilde, float) * Mx)
            return np.asarray(x_ref, float) / Mx, np.asarray(u_ref, float) / Mu

    return replace(
        problem,
        dynamics=problem.dynamics.nondimensionalize(scaling),
        Q=(Mx * problem.Q * Mx) / scaling.m_L,
        R=(Mu * problem.R * Mu) / scaling.m_L,
        Q_N=(Mx * problem.Q_N * Mx) / scaling.m_T,
        x_ref=problem.x_ref / Mx,
        u_ref=problem.u_ref / Mu,
        x_lb=problem.x_lb / Mx,
        x_ub=problem.x_ub / Mx,
        u_lb=problem.u_lb / Mu,
        u_ub=problem.u_ub / Mu,
        x_lb_N=problem.x_lb_N / Mx,
        x_ub_N=problem.x_ub_N / Mx,
        dt=problem.dt / scaling.m_t,
        reference_fn=ref_fn,
        scaling=None,
    )


class DimensionlessMpcPolicy:
    """State-feedback policy wrapping the dimensionless MPC: the physical
    state is scaled down, solved in dimensionless form, and the optimal first
    input scaled back up. Warm starts carry over between calls, so a single
    instance is not reentrant."""

    def __init__(self, dproblem: MpcProblem, scaling: ScalingTransform):
        self.problem = dproblem
        self.scaling = scaling
        self.last_solution: MpcSolution | None = None

    def reset(self):
        self.last_solution = None

    def dimensionless(self, s_tilde) -> np.ndarray:
        sol = solve(self.problem, s_tilde, warm_start=self.last_solution)
        self.last_solution = sol
        return sol.u0

    def __call__(self, s_t) -> np.ndarray:
        s_tilde = np.asarray(s_t, float) / self.scaling.M_x
        return self.scaling.M_u * self.dimensionless(s_tilde)


def dimensionless_policy(
    dproblem: MpcProblem, scaling: ScalingTransform
) -> DimensionlessMpcPolicy:
    return DimensionlessMpcPolicy(dproblem, scaling)


# --------------------------------------------------------------------------
# race car delta-u formulation
# --------------------------------------------------------------------------

RACECAR_DT_NONDIM = 0.02
RACECAR_HORIZON = 20
RACECAR_LOOKAHEAD = 3.0  # car lengths
RACECAR_V_REF_NONDIM = 12.0
RACECAR_RATE_BOUND_NONDIM = 10.0
RACECAR_DEFAULT_WEIGHTS = (0.05, 20.0, 5.0, 0.05, 20.0, 5.0)


def _racecar_delta_u_model(params: QuantitySet, track: Track) -> OdeModel:
    base = racecar_model(params, track)
    base_rhs = base.rhs

    def rhs(x, u, p):
        core = base_rhs(x[..., :4], x[..., 4:6], p)
        return np.concatenate([core, u], axis=-1)

    inv_time = DimensionVector([0, 0, -1])
    return OdeModel(
        state_dims=(LENGTH, LENGTH, DIMLESS, VELOCITY, DIMLESS, DIMLESS),
        input_dims=(inv_time, inv_time),
        params=params,
        rhs=rhs,
        name="racecar_du",
        kernel_id="racecar_du",
        kernel_args=base.kernel_args,
    )


def build_racecar_delta_u_problem(
    params: QuantitySet,
    track: Track,
    weights=RACECAR_DEFAULT_WEIGHTS,
) -> MpcProblem:
    """Race-car MPC over input rates. Augmented state [sigma, n, alpha, v, D,
    delta], inputs [dD/dt, ddelta/dt]. ``weights`` are the six dimensionless
    tunables: stage and terminal diagonal entries on (sigma, n, alpha)."""
    weights = np.asarray(weights, float)
    if weights.shape != (6,):
        raise ValueError("expected 6 weights: stage and terminal (sigma, n, alpha)")
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")

    model = _racecar_delta_u_model(params, track)
    scaling = ScalingTransform.from_quantities(
        params, model.state_dims, model.input_dims
    )
    l = params.value("l")
    c_r3 = params.value("c_r3")
    m_t = scaling.m_t  # l * c_r3
    dt = m_t * RACECAR_DT_NONDIM
    dyn = DiscretizedOde(model, dt)

    # dimensionless weights; physical entries q = q_tilde / m^2
    q_tilde = np.array([weights[0], weights[1], weights[2], 1.0, 1e-2, 1e-2])
    qN_tilde = np.array([weights[3], weights[4], weights[5], 1.0, 1e-2, 1e-2])
    r_tilde = np.array([1e-2, 1e-2])
    Q = q_tilde / scaling.M_x**2
    Q_N = qN_tilde / scaling.M_x**2
    R = r_tilde / scaling.M_u**2

    v_ref = RACECAR_V_REF_NONDIM / c_r3
    lookahead = RACECAR_LOOKAHEAD * l

    def reference_fn(s):
        x_ref = np.array([s[0] + lookahead, 0.0, 0.0, v_ref, 0.0, 0.0])
        return x_ref, np.zeros(2)

    inf = np.inf
    n_max = 0.8 * track.half_width
    rate = RACECAR_RATE_BOUND_NONDIM / m_t
    return MpcProblem(
        N=RACECAR_HORIZON,
        gamma=1.0,
        dynamics=dyn,
        Q=Q,
        R=R,
        Q_N=Q_N,
        x_ref=np.array([0.0, 0.0, 0.0, v_ref, 0.0, 0.0]),
        u_ref=np.zeros(2),
        x_lb=np.array([-inf, -n_max, -inf, -inf, -1.0, -0.4]),
        x_ub=np.array([inf, n_max, inf, inf, 1.0, 0.4]),
        u_lb=np.array([-rate, -rate]),
        u_ub=np.array([rate, rate]),
        x_lb_N=np.array([-inf, -n_max, -inf, -inf, -1.0, -0.4]),
        x_ub_N=np.array([inf, n_max, inf, inf, 1.0, 0.4]),
        dt=dt,
        theta=("Q0", "Q1", "Q2", "QN0", "QN1", "QN2"),
        reference_fn=reference_fn,
        scaling=scaling,
    )


# --------------------------------------------------------------------------
# dump / restore
# --------------------------------------------------------------------------

def problem_to_dict(problem: MpcProblem) -> dict:
    def arr(a):
        return [None if np.isinf(v) else float(v) for v in np.asarray(a).ravel()]

    data = {
        "N": problem.N,
        "gamma": problem.gamma,
        "dt": problem.dt,
        "Q": arr(problem.Q),
        "R": arr(problem.R),
        "Q_N": arr(problem.Q_N),
        "x_ref": arr(problem.x_ref),
        "u_ref": arr(problem.u_ref),
        "x_lb": arr(problem.x_lb),
        "x_ub": arr(problem.x_ub),
        "u_lb": arr(problem.u_lb),
        "u_ub": arr(problem.u_ub),
        "x_lb_N": arr(problem.x_lb_N),
        "x_ub_N": arr(problem.x_ub_N),
        "theta": list(problem.theta),
    }
    if problem.scaling is not None:
        data["scaling"] = {
            "M_x": arr(problem.scaling.M_x),
            "M_u": arr(problem.scaling.M_u),
            "m_t": problem.scaling.m_t,
        }
    return data


def _unarr(values, sign=1.0):
    return np.array([sign * np.inf if v is None else v for v in values])


def problem_from_dict(data: dict, dynamics, reference_fn=None) -> MpcProblem:
    scaling = None
    if "scaling" in data:
        s = data["scaling"]
        scaling = ScalingTransform(
            M_x=np.array(s["M_x"]), M_u=np.array(s["M_u"]), m_t=s["m_t"]
        )
    return MpcProblem(
        N=data["N"],
        gamma=data["gamma"],
        dynamics=dynamics,
        Q=np.array(data["Q"]),
        R=np.array(data["R"]),
        Q_N=np.array(data["Q_N"]),
        x_ref=np.array(data["x_ref"]),
        u_ref=np.array(data["u_ref"]),
        x_lb=_unarr(data["x_lb"], -1.0),
        x_ub=_unarr(data["x_ub"]),
        u_lb=_unarr(data["u_lb"], -1.0),
        u_ub=_unarr(data["u_ub"]),
        x_lb_N=_unarr(data["x_lb_N"], -1.0),
        x_ub_N=_unarr(data["x_ub_N"]),
        dt=data["dt"],
        theta=tuple(data.get("theta", ())),
        reference_fn=reference_fn,
        scaling=scaling,
    )
