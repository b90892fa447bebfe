"""Gaussian-process Bayesian optimization of MPC cost weights against a
closed-loop objective: Matern-5/2 GP on log-parameters, expected improvement
acquisition, deterministic given the seed."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import ConstantKernel, Matern

__all__ = [
    "TunerConfig",
    "TrialRecord",
    "TuningFailedError",
    "suggest_next",
    "tune",
    "write_history_csv",
    "best_so_far",
    "DEFAULT_BOUNDS",
]

DEFAULT_BOUNDS = (1e-3, 1e3)
N_CANDIDATES = 256
N_LOCAL_STARTS = 5
GP_NOISE = 1e-8
INFEASIBLE_PENALTY = 1.0


class TuningFailedError(RuntimeError):
    """Every trial was infeasible."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


@dataclass(frozen=True)
class TunerConfig:
    bounds: tuple[tuple[float, float], ...]
    n_trials: int = 50
    n_init: int = 10
    seed: int = 0
    episode_budget: int | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "bounds", tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        )
        for lo, hi in self.bounds:
            if not (0.0 < lo < hi):
                raise ValueError("bounds must satisfy 0 < low < high")
        if self.n_init < 2:
            raise ValueError("n_init must be >= 2")
        if self.n_trials < self.n_init:
            raise ValueError("n_trials must be >= n_init")

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def log_bounds(self) -> np.ndarray:
        return np.log(np.asarray(self.bounds, float))


@dataclass
class TrialRecord:
    params: np.ndarray
    objective: float
    feasible: bool
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params = np.asarray(self.params, float)
        if self.feasible and not np.isfinite(self.objective):
            raise ValueError("feasible trial must have a finite objective")


def _penalized_objectives(history: Sequence[TrialRecord]) -> np.ndarray:
    """Objectives with infeasible trials replaced by worst observed + 1."""
    feas = [t.objective for t in history if t.feasible]
    worst = max(feas) if feas else 0.0
    return np.array(
        [t.objective if t.feasible else worst + INFEASIBLE_PENALTY for t in history]
    )


def _random_point(config: TunerConfig, rng: np.random.Generator) -> np.ndarray:
    lb = config.log_bounds()
    z = rng.uniform(lb[:, 0], lb[:, 1])
    return np.exp(z)


def suggest_next(
    history: Sequence[TrialRecord],
    config: TunerConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Next parameter vector: seeded uniform in log-space during the init
    phase, expected-improvement maximization under a Matern-5/2 GP after."""
    if len(history) < config.n_init:
        return _random_point(config, rng)

    X = np.log(np.array([t.params for t in history]))
    y = _penalized_objectives(history)
    if np.ptp(y) < 1e-12:
        # degenerate GP: all objectives identical
        return _random_point(config, rng)

    lb = config.log_bounds()
    span = np.maximum(lb[:, 1] - lb[:, 0], 1e-8)
    kernel = ConstantKernel(1.0, (1e-3, 1e3)) * Matern(
        length_scale=0.2 * span,
        length_scale_bounds=np.column_stack([1e-3 * span, 10.0 * span]),
        nu=2.5,
    )
    gp = GaussianProcessRegressor(
        kernel=kernel, alpha=GP_NOISE, normalize_y=True, random_state=0
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        gp.fit(X, y)

    y_best = y.min()

    def neg_ei(z):
        z = np.atleast_2d(z)
        mu, sd = gp.predict(z, return_std=True)
        sd = np.maximum(sd, 1e-12)
        imp = y_best - mu
        u = imp / sd
        return -(imp * norm.cdf(u) + sd * norm.pdf(u))

    cand = rng.uniform(lb[:, 0], lb[:, 1], size=(N_CANDIDATES, config.dim))
    scores = neg_ei(cand)
    order = np.argsort(scores, kind="stable")
    best_z = cand[order[0]]
    best_score = scores[order[0]]
    for idx in order[:N_LOCAL_STARTS]:
        res = minimize(
            lambda z: float(neg_ei(z)[0]),
            cand[idx],
            method="L-BFGS-B",
            bounds=lb,
        )
        if res.fun < best_score:
            best_score = res.fun
            best_z = res.x
    return np.exp(best_z)


def best_so_far(history: Sequence[TrialRecord]) -> list[float]:
    """Incumbent objective after each trial (infeasible trials penalized)."""
    y = _penalized_objectives(history)
    return [float(v) for v in np.minimum.accumulate(y)]


def tune(
    objective: Callable[[np.ndarray], TrialRecord],
    config: TunerConfig,
) -> tuple[TrialRecord, list[TrialRecord]]:
    """Sequential BO loop; returns the incumbent-best record and the full
    history. Deterministic: identical seed and config reproduce the history
    bitwise."""
    rng = np.random.default_rng(config.seed)
    history: list[TrialRecord] = []
    best: TrialRecord | None = None
    for _ in range(config.n_trials):
        params = suggest_next(history, config, rng)
        record = objective(params)
        history.append(record)
        if record.feasible and (best is None or record.objective < best.objective):
            best = record
    if best is None:
        raise TuningFailedError("every trial was infeasible", history=history)
    return best, history


def write_history_csv(path, history: Sequence[TrialRecord]):
    """CSV export: trial,param_0,...,objective,feasible,best_so_far."""
    incumbent = best_so_far(history)
    dim = len(history[0].params) if history else 0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["trial"]
            + [f"param_{i}" for i in range(dim)]
            + ["objective", "feasible", "best_so_far"]
        )
        for i, t in enumerate(history):
            writer.writerow(
                [i]
                + [repr(float(p)) for p in t.params]
                + [repr(float(t.objective)), int(t.feasible), repr(incumbent[i])]
            )
