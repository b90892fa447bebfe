"""Command-line interface: dimensional analysis, similar-system matching,
closed-loop simulation, weight tuning and transfer verification.

Exit codes: 0 success, 2 parse error, 3 dimensional error, 4 invalid
configuration, 5 dissimilar systems, 6 solver failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from fractions import Fraction

import numpy as np

from . import __version__, envs, mpc, tuning
from .dimensional import (
    DimensionalError,
    InfeasibleMatchError,
    UnknownQuantityError,
    compute_pi_groups,
    dump_system_spec,
    parse_system_spec,
    pi_distance,
)
from .dynamics import (
    Track,
    desk_track,
    dump_track,
    write_trajectory_csv,
)
from .mdp import result_to_dict
from .mpc import DivergenceError, SolverError

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_DIMENSIONAL = 3
EXIT_CONFIG = 4
EXIT_DISSIMILAR = 5
EXIT_SOLVER = 6

TRANSFER_RMS_TOL = 1e-6

log = logging.getLogger("dimless_mpc")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("DIMLESS_MPC_LOG", "error").lower(), logging.ERROR
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _atomic_write(path, text: str):
    d = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _write_json(path, data):
    _atomic_write(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def _load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError as exc:
        raise CliError(f"file not found: {path}", EXIT_PARSE) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed JSON in {path}: {exc}", EXIT_PARSE) from exc


def _load_quantities(data):
    try:
        return parse_system_spec(data)
    except (KeyError, TypeError) as exc:
        raise CliError(f"malformed system spec: {exc}", EXIT_PARSE) from exc
    except (DimensionalError, UnknownQuantityError, ValueError) as exc:
        raise CliError(str(exc), EXIT_DIMENSIONAL) from exc


def _config_hash() -> str:
    """Hash of every numeric default the commands rely on."""
    defaults = {
        "cartpole_dt_nondim": envs.CARTPOLE_DT_NONDIM,
        "cartpole_episode_steps": envs.CARTPOLE_EPISODE_STEPS,
        "cartpole_horizon": envs.CARTPOLE_HORIZON,
        "cartpole_default_weights": list(envs.CARTPOLE_DEFAULT_WEIGHTS),
        "cartpole_terminal_factor": envs.CARTPOLE_TERMINAL_FACTOR,
        "cartpole_success_angle": envs.CARTPOLE_SUCCESS_ANGLE,
        "race_time_limit_nondim": envs.RACE_TIME_LIMIT_NONDIM,
        "racecar_dt_nondim": mpc.RACECAR_DT_NONDIM,
        "racecar_horizon": mpc.RACECAR_HORIZON,
        "racecar_lookahead": mpc.RACECAR_LOOKAHEAD,
        "racecar_v_ref_nondim": mpc.RACECAR_V_REF_NONDIM,
        "racecar_rate_bound_nondim": mpc.RACECAR_RATE_BOUND_NONDIM,
        "racecar_default_weights": list(mpc.RACECAR_DEFAULT_WEIGHTS),
        "kkt_tol": mpc.KKT_TOL,
        "max_sqp_iter": mpc.MAX_SQP_ITER,
        "slack_weight": mpc.SLACK_WEIGHT,
        "transfer_rms_tol": TRANSFER_RMS_TOL,
        "tuner_default_bounds": list(tuning.DEFAULT_BOUNDS),
    }
    blob = json.dumps(defaults, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _write_manifest(out_dir, command, inputs, seed):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "inputs": [os.path.abspath(p) for p in inputs],
        "seed": seed,
        "out": os.path.abspath(out_dir),
        "version": __version__,
        "config_hash": _config_hash(),
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)


# --------------------------------------------------------------------------
# task loading
# --------------------------------------------------------------------------

def _load_task(path):
    """Returns (kind, params, scaling, task) from a task-spec JSON file."""
    data = _load_json(path)
    try:
        kind = data["task"]
    except KeyError as exc:
        raise CliError("task spec missing 'task' field", EXIT_PARSE) from exc
    if "system" in data:
        qs = _load_quantities(data["system"])
    elif "system_path" in data:
        base = os.path.dirname(os.path.abspath(path))
        qs = _load_quantities(_load_json(os.path.join(base, data["system_path"])))
    else:
        raise CliError("task spec missing 'system' or 'system_path'", EXIT_PARSE)

    if kind == "cartpole":
        from .dynamics import cartpole_model
        from .dynamics import ScalingTransform

        model = cartpole_model(qs)
        scaling = ScalingTransform.from_quantities(
            qs, model.state_dims, model.input_dims
        )
        steps = int(data.get("episode_steps", envs.CARTPOLE_EPISODE_STEPS))
        return kind, qs, scaling, envs.CartpoleTask(params=qs, episode_steps=steps)
    if kind == "racecar":
        from .dynamics import ScalingTransform

        if "track" in data:
            try:
                track = Track(
                    tuple(
                        (s["length"], s["curvature"]) for s in data["track"]["segments"]
                    ),
                    data["track"]["half_width"],
                )
            except (KeyError, TypeError) as exc:
                raise CliError(f"malformed track: {exc}", EXIT_PARSE) from exc
            except ValueError as exc:
                raise CliError(str(exc), EXIT_CONFIG) from exc
        elif "track_path" in data:
            from .dynamics import load_track

            base = os.path.dirname(os.path.abspath(path))
            track = load_track(os.path.join(base, data["track_path"]))
        else:
            track = desk_track(qs.value("l"))
        state_dims, input_dims = envs._racecar_du_dims()
        scaling = ScalingTransform.from_quantities(qs, state_dims, input_dims)
        return kind, qs, scaling, envs.RaceTask(params=qs, track=track)
    raise CliError(f"unknown task kind {kind!r}", EXIT_PARSE)


def _load_weights(path, kind):
    if path is None:
        return None
    data = _load_json(path)
    try:
        weights = np.asarray(data["weights"], float)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"malformed weights file: {exc}", EXIT_PARSE) from exc
    expected = 5 if kind == "cartpole" else 6
    if weights.shape != (expected,):
        raise CliError(
            f"expected {expected} weights for task {kind!r}, got {weights.shape}",
            EXIT_CONFIG,
        )
    if np.any(weights < 0):
        raise CliError("weights must be nonnegative", EXIT_CONFIG)
    return weights


def _build_problem(kind, qs, task, weights):
    try:
        if kind == "cartpole":
            w = weights if weights is not None else envs.CARTPOLE_DEFAULT_WEIGHTS
            prob = envs.build_cartpole_problem(qs, w)
        else:
            w = weights if weights is not None else mpc.RACECAR_DEFAULT_WEIGHTS
            prob = mpc.build_racecar_delta_u_problem(qs, task.track, weights=w)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    if np.all(prob.R <= 0.0):
        raise CliError("degenerate problem: input weight R must be positive",
                       EXIT_CONFIG)
    return prob


def _make_policy(kind, qs, scaling, task, weights):
    prob = _build_problem(kind, qs, task, weights)
    dprob = mpc.nondimensionalize_mpc(prob, scaling)
    return mpc.DimensionlessMpcPolicy(dprob, scaling)


def _run_episode(kind, qs, scaling, task, weights):
    policy = _make_policy(kind, qs, scaling, task, weights)
    try:
        result = envs.run_task(task, policy)
    except (SolverError, DivergenceError) as exc:
        raise CliError(f"solver failure: {exc}", EXIT_SOLVER) from exc
    if "error" in result.info:
        raise CliError(f"episode failed: {result.info['error']}", EXIT_SOLVER)
    return result


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_pi(args) -> int:
    qs = _load_quantities(_load_json(args.system_spec))
    try:
        groups = compute_pi_groups(qs)
    except DimensionalError as exc:
        raise CliError(str(exc), EXIT_DIMENSIONAL) from exc
    out = [
        {
            "symbol": g.symbol(),
            "monomial": {n: str(Fraction(e)) for n, e in g.monomial.items()},
            "value": g.value,
        }
        for g in groups
    ]
    text = json.dumps(out, indent=2)
    if args.out:
        _atomic_write(args.out, text + "\n")
    print(text)
    return EXIT_OK


def cmd_match(args) -> int:
    from .dimensional import match_similar_system

    qs = _load_quantities(_load_json(args.system_spec))
    new_values = {}
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects name=value, got {item!r}", EXIT_PARSE)
        name, _, value = item.partition("=")
        try:
            new_values[name] = float(value)
        except ValueError as exc:
            raise CliError(f"invalid value in --set {item!r}", EXIT_PARSE) from exc
    try:
        matched = match_similar_system(qs, fixed=args.fixed or [], new_values=new_values)
    except (InfeasibleMatchError, DimensionalError, UnknownQuantityError) as exc:
        raise CliError(str(exc), EXIT_DIMENSIONAL) from exc
    _write_json(args.out, dump_system_spec(matched))
    log.info("matched spec written to %s (pi distance %.3e)",
             args.out, pi_distance(qs, matched))
    print(f"pi_distance: {pi_distance(qs, matched):.3e}")
    return EXIT_OK


def _write_episode_outputs(out_dir, kind, scaling, task, result):
    traj = os.path.join(out_dir, "trajectory.csv")
    traj_nd = os.path.join(out_dir, "trajectory_nondim.csv")
    n_in = result.inputs.shape[0]
    write_trajectory_csv(traj, result.states[: n_in + 1], result.inputs, task.dt)
    write_trajectory_csv(
        traj_nd,
        result.states[: n_in + 1] / scaling.M_x,
        result.inputs / scaling.M_u,
        task.dt / scaling.m_t,
    )
    # relative path keeps the output directory relocatable and byte-identical
    # across reruns
    data = result_to_dict(result, trajectory_path=os.path.basename(traj))
    data["task"] = kind
    _write_json(os.path.join(out_dir, "result.json"), data)
    return data


def cmd_simulate(args) -> int:
    kind, qs, scaling, task = _load_task(args.task_spec)
    weights = _load_weights(args.weights, kind)
    inputs = [args.task_spec] + ([args.weights] if args.weights else [])
    _write_manifest(args.out, "simulate", inputs, args.seed)
    result = _run_episode(kind, qs, scaling, task, weights)
    data = _write_episode_outputs(args.out, kind, scaling, task, result)
    print(json.dumps({k: data[k] for k in ("task", "objective", "success", "info")},
                     indent=2, sort_keys=True))
    return EXIT_OK


def cmd_tune(args) -> int:
    kind, qs, scaling, task = _load_task(args.task_spec)
    cfg_data = _load_json(args.tuner_config)
    dim = 5 if kind == "cartpole" else 6
    try:
        bounds = cfg_data.get("bounds") or [list(tuning.DEFAULT_BOUNDS)] * dim
        config = tuning.TunerConfig(
            bounds=tuple(tuple(b) for b in bounds),
            n_trials=int(cfg_data.get("n_trials", 50)),
            n_init=int(cfg_data.get("n_init", 10)),
            seed=int(cfg_data.get("seed", args.seed)),
        )
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid tuner config: {exc}", EXIT_CONFIG) from exc
    if len(config.bounds) != dim:
        raise CliError(
            f"expected {dim} bound pairs for task {kind!r}", EXIT_CONFIG
        )
    _write_manifest(args.out, "tune", [args.task_spec, args.tuner_config], config.seed)

    def objective(params):
        try:
            result = _run_episode(kind, qs, scaling, task, params)
        except CliError:
            return tuning.TrialRecord(params, np.inf, False)
        if kind == "cartpole":
            return tuning.TrialRecord(
                params, -result.info["score"], bool(result.success)
            )
        if not result.info["lap"]:
            return tuning.TrialRecord(params, np.inf, False)
        return tuning.TrialRecord(params, result.info["lap_time"], True)

    try:
        best, history = tuning.tune(objective, config)
    except tuning.TuningFailedError as exc:
        tuning.write_history_csv(os.path.join(args.out, "history.csv"), exc.history)
        raise CliError("every tuning trial was infeasible", EXIT_SOLVER) from exc
    tuning.write_history_csv(os.path.join(args.out, "history.csv"), history)
    _write_json(
        os.path.join(args.out, "best_weights.json"),
        {"weights": [float(w) for w in best.params],
         "objective": float(best.objective)},
    )
    print(json.dumps({"best_objective": best.objective,
                      "best_weights": list(best.params)}, indent=2))
    return EXIT_OK


def cmd_transfer(args) -> int:
    kind_a, qs_a, sc_a, task_a = _load_task(args.task_spec_a)
    kind_b, qs_b, sc_b, task_b = _load_task(args.task_spec_b)
    if kind_a != kind_b:
        raise CliError("task specs are of different kinds", EXIT_CONFIG)
    weights = _load_weights(args.weights, kind_a)
    _write_manifest(
        args.out, "transfer",
        [args.task_spec_a, args.task_spec_b] + ([args.weights] if args.weights else []),
        args.seed,
    )
    try:
        dist = pi_distance(qs_a, qs_b)
    except (DimensionalError, UnknownQuantityError) as exc:
        raise CliError(str(exc), EXIT_DIMENSIONAL) from exc
    if dist > args.tol:
        print(json.dumps({"similar": False, "pi_distance": dist}, indent=2))
        raise CliError(
            f"systems are not dynamically similar (pi distance {dist:.3e})",
            EXIT_DISSIMILAR,
        )

    res_a = _run_episode(kind_a, qs_a, sc_a, task_a, weights)
    res_b = _run_episode(kind_b, qs_b, sc_b, task_b, weights)
    for name, scaling, task, res in (
        ("a", sc_a, task_a, res_a), ("b", sc_b, task_b, res_b)
    ):
        sub = os.path.join(args.out, name)
        os.makedirs(sub, exist_ok=True)
        _write_episode_outputs(sub, kind_a, scaling, task, res)

    n = min(len(res_a.states), len(res_b.states))
    gap = res_a.states[:n] / sc_a.M_x - res_b.states[:n] / sc_b.M_x
    rms = float(np.sqrt(np.mean(gap**2)))
    mt_ratio = sc_b.m_t / sc_a.m_t
    report = {
        "similar": True,
        "pi_distance": dist,
        "trajectory_rms": rms,
        "rms_tol": TRANSFER_RMS_TOL,
        "pass": bool(rms < TRANSFER_RMS_TOL and res_a.success and res_b.success),
        "m_t_ratio": mt_ratio,
        "success_a": bool(res_a.success),
        "success_b": bool(res_b.success),
    }
    if kind_a == "cartpole":
        report["score_a"] = res_a.info["score"]
        report["score_b"] = res_b.info["score"]
        report["score_ratio"] = res_b.info["score"] / res_a.info["score"]
    else:
        report["lap_time_a"] = res_a.info["lap_time"]
        report["lap_time_b"] = res_b.info["lap_time"]
        if np.isfinite(res_a.info["lap_time"]) and res_a.info["lap_time"] > 0:
            report["lap_time_ratio"] = res_b.info["lap_time"] / res_a.info["lap_time"]
    _write_json(os.path.join(args.out, "report.json"), report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dimless-mpc",
        description="Dimensional analysis, nondimensionalized MPC, and "
        "zero-shot controller transfer across similar systems.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pi", help="compute the Buckingham pi groups of a system spec")
    p.add_argument("system_spec")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_pi)

    p = sub.add_parser("match", help="solve for a dynamically similar system")
    p.add_argument("system_spec")
    p.add_argument("--set", nargs="+", metavar="NAME=VALUE")
    p.add_argument("--fixed", nargs="+", metavar="NAME", default=[])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("simulate", help="run a closed-loop episode")
    p.add_argument("task_spec")
    p.add_argument("weights", nargs="?", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tune", help="Bayesian optimization of the MPC weights")
    p.add_argument("task_spec")
    p.add_argument("tuner_config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("transfer", help="verify zero-shot transfer between two systems")
    p.add_argument("task_spec_a")
    p.add_argument("task_spec_b")
    p.add_argument("weights", nargs="?", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_transfer)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
