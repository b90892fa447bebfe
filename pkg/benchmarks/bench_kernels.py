"""Benchmark the compiled RK4 kernels against the pure-numpy fallback.

Run directly: python3 benchmarks/bench_kernels.py
Set DIMLESS_MPC_PURE=1 before importing to force the fallback everywhere;
this script instead compares both paths in one process by rebuilding the
steppers with and without the compiled backend.
"""

from __future__ import annotations

import time

import numpy as np

from dimless_mpc import _kernels
from dimless_mpc.dynamics import (
    cartpole_model,
    cartpole_quantities,
    desk_track,
    racecar_model,
    racecar_quantities,
)
from dimless_mpc.mpc import DiscretizedOde


def _time_steps(step, X, U, h, nsub, repeats):
    t0 = time.perf_counter()
    for _ in range(repeats):
        step(X, U, h, nsub)
    return (time.perf_counter() - t0) / repeats


def bench_model(name, model, nx, nu, batch=64, repeats=2000):
    rng = np.random.default_rng(0)
    X = rng.normal(scale=0.1, size=(batch, nx))
    U = rng.normal(scale=0.1, size=(batch, nu))
    if name.startswith("racecar"):
        X[:, 0] = rng.uniform(0.0, 1.0, batch)  # progress along the track
        X[:, 1] *= 0.1  # stay inside the half-width
        X[:, 3] = np.abs(X[:, 3])
    h = 1e-3
    nsub = 4

    dyn = DiscretizedOde(model, h * nsub, n_substeps=nsub)
    kernel = dyn._kernel

    def pure_step(X, U, h, nsub):
        x = X
        for _ in range(nsub):
            k1 = model.eval(x, U)
            k2 = model.eval(x + 0.5 * h * k1, U)
            k3 = model.eval(x + 0.5 * h * k2, U)
            k4 = model.eval(x + h * k3, U)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return x

    t_pure = _time_steps(pure_step, X, U, h, nsub, repeats)
    row = f"{name:12s} pure {t_pure * 1e6:9.1f} us/call"
    if kernel is not None:
        out_k = kernel(X, U, h, nsub)
        out_p = pure_step(X, U, h, nsub)
        err = np.abs(out_k - out_p).max()
        t_comp = _time_steps(kernel, X, U, h, nsub, repeats)
        row += (
            f"   compiled {t_comp * 1e6:9.1f} us/call"
            f"   speedup {t_pure / t_comp:6.2f}x   max|diff| {err:.2e}"
        )
    else:
        row += "   (compiled backend unavailable)"
    print(row)


def main():
    print(f"kernel backend: {_kernels.backend_name()}")
    cp = cartpole_model(cartpole_quantities())
    bench_model("cartpole", cp, 4, 1)

    params = racecar_quantities()
    track = desk_track(params.value("l"))
    rc = racecar_model(params, track)
    bench_model("racecar", rc, 4, 2)

    from dimless_mpc.mpc import _racecar_delta_u_model

    rcd = _racecar_delta_u_model(params, track)
    bench_model("racecar_du", rcd, 6, 2)


if __name__ == "__main__":
    main()
