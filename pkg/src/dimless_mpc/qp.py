"""Primal active-set solver for box-constrained quadratic programs.

Minimizes 0.5 * x' H x + g' x subject to lb <= x <= ub, with H positive
definite on every free subspace. Deterministic: ties are broken by lowest
index so that identical problems yield bit-identical solutions.
"""

from __future__ import annotations

import numpy as np

__all__ = ["solve_box_qp", "QpError"]

FREE, AT_LB, AT_UB = 0, -1, 1


class QpError(RuntimeError):
    """QP subproblem could not be solved."""


def solve_box_qp(
    H: np.ndarray,
    g: np.ndarray,
    lb: np.ndarray,
    ub: np.ndarray,
    x0: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> np.ndarray:
    n = len(g)
    lb = np.asarray(lb, float)
    ub = np.asarray(ub, float)
    if np.any(lb > ub):
        raise QpError("inconsistent bounds: lb > ub")
    x = np.clip(x0 if x0 is not None else np.zeros(n), lb, ub)
    status = np.zeros(n, dtype=int)
    status[x <= lb] = AT_LB
    status[x >= ub] = AT_UB
    status[lb == ub] = AT_LB

    grad_scale = max(1.0, float(np.abs(g).max(initial=0.0)))
    for _ in range(max_iter):
        grad = H @ x + g
        free = status == FREE
        # step on the free subspace toward the unconstrained minimizer
        if free.any():
            Hff = H[np.ix_(free, free)]
            try:
                p_f = np.linalg.solve(Hff, -grad[free])
            except np.linalg.LinAlgError:
                p_f = np.linalg.lstsq(Hff, -grad[free], rcond=None)[0]
        else:
            p_f = np.zeros(0)

        # stationary when the free gradient vanishes (relative to the problem
        # scale) or the Newton step is too small to change the iterate
        mult_tol = tol * grad_scale
        stationary = np.abs(grad[free]).max(initial=0.0) <= mult_tol or (
            np.abs(p_f).max(initial=0.0)
            <= 1e-16 * (1.0 + float(np.abs(x).max(initial=0.0)))
        )
        if stationary:
            # KKT check: multipliers of the active bounds must have the right sign
            viol_lb = (status == AT_LB) & (grad < -mult_tol) & (lb < ub)
            viol_ub = (status == AT_UB) & (grad > mult_tol) & (lb < ub)
            viol = np.flatnonzero(viol_lb | viol_ub)
            if viol.size == 0:
                return x
            status[viol[0]] = FREE  # release lowest index
            continue

        p = np.zeros(n)
        p[free] = p_f
        # largest feasible step along p
        alpha = 1.0
        blocker = -1
        blocker_side = FREE
        idx_free = np.flatnonzero(free)
        for i in idx_free:
            if p[i] > 0 and x[i] + p[i] > ub[i]:
                a = (ub[i] - x[i]) / p[i]
                if a < alpha - 1e-16:
                    alpha, blocker, blocker_side = a, i, AT_UB
            elif p[i] < 0 and x[i] + p[i] < lb[i]:
                a = (lb[i] - x[i]) / p[i]
                if a < alpha - 1e-16:
                    alpha, blocker, blocker_side = a, i, AT_LB
        x = x + alpha * p
        if blocker >= 0:
            x[blocker] = ub[blocker] if blocker_side == AT_UB else lb[blocker]
            status[blocker] = blocker_side
        x = np.clip(x, lb, ub)
    raise QpError("active-set QP did not converge")
