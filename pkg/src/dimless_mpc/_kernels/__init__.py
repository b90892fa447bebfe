"""Backend selection for the hot RK4 kernels.

At import time we try the compiled Cython extension; if it is missing (or
``DIMLESS_MPC_PURE=1`` is set) every model falls back to the generic
vectorized-numpy path in :mod:`dimless_mpc.dynamics`, which is semantically
identical but slower. ``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import importlib
import os

import numpy as np

_core = None
if os.environ.get("DIMLESS_MPC_PURE") != "1":
    try:
        _core = importlib.import_module("._core", __name__)
    except ImportError:
        _core = None


def backend_name() -> str:
    return "compiled" if _core is not None else "python"


def bind(kernel_id: str, args: tuple, scale=None):
    """Return a batched stepper (X, U, h, n_substeps) -> X_next for a known
    kernel id, or None to use the generic python path."""
    if _core is None:
        return None
    if scale is None:
        mx = mu = None
        mt = 1.0
    else:
        mx, mu, mt = scale
    if kernel_id == "cartpole":
        (p,) = args
        mx = np.ones(4) if mx is None else np.asarray(mx, float)
        mu = np.ones(1) if mu is None else np.asarray(mu, float)

        def stepper(X, U, h, nsub):
            return _core.rk4_cartpole(
                np.ascontiguousarray(X), np.ascontiguousarray(U),
                float(h), int(nsub), p, mx, mu, float(mt),
            )

        return stepper
    if kernel_id in ("racecar", "racecar_du"):
        p, ends, curv, total = args
        nx = 4 if kernel_id == "racecar" else 6
        mx = np.ones(nx) if mx is None else np.asarray(mx, float)
        mu = np.ones(2) if mu is None else np.asarray(mu, float)
        fn = _core.rk4_racecar if kernel_id == "racecar" else _core.rk4_racecar_du

        def stepper(X, U, h, nsub):
            return fn(
                np.ascontiguousarray(X), np.ascontiguousarray(U),
                float(h), int(nsub), p, ends, curv, float(total),
                mx, mu, float(mt),
            )

        return stepper
    return None
