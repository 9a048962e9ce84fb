"""Command-line front end: solve, analyze, sweep, simulate, learn, rerun.

Every command validates the scenario, runs its pipeline, and writes its
outputs plus a run manifest into --out.  Outputs are plain CSV/JSON with
full round-trip float formatting; files are written atomically (temp +
rename).  Re-running a manifest reproduces the outputs byte for byte.

Exit codes: 0 success, 2 validation/config error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .learn import LearnConfig, greedy_policy, run_q_learning
from .model import (
    Action,
    Policy,
    ScenarioError,
    SmdpModel,
    bundled_scenario_path,
    check_regulation,
    load_scenario,
    load_scenario_path,
)
from .risk import (
    attraction_efficiency,
    build_generator,
    default_time_grid,
    first_passage,
    limiting_occupancy,
    mfpt_vector,
    transient_occupancy,
)
from .sim import RngSeed, batch_rollout_utilities, estimate_hitting_times, horizon_for_tail, simulate_path
from .solver import NonConvergenceError, policy_evaluation, tradeoff_surface, value_iteration
from .sweeps import sweep_intelligence, sweep_persistence

MANIFEST_NAME = "run_manifest.json"


# -- formatting and file helpers -------------------------------------------------


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonify(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, Action):
        return obj.wire
    return obj


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_json(path: Path, obj: Any) -> None:
    _atomic_write(path, json.dumps(_jsonify(obj), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows: list[tuple]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(c) for c in row) for row in rows)
    _atomic_write(path, "\n".join(lines) + "\n")


def _resolve_scenario(spec: str) -> Path:
    p = Path(spec)
    if p.exists():
        return p
    try:
        return bundled_scenario_path(spec)
    except FileNotFoundError:
        raise ScenarioError(f"scenario {spec!r} is neither a file nor a bundled scenario name") from None


def _apply_override(doc: Any, dotted: str, raw_value: str) -> None:
    """Set a dotted-path entry of the parsed document, e.g. gamma=0.2 or
    rates.3.lambda=1.5; values parse as JSON scalars when possible."""
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    keys = dotted.split(".")
    node = doc
    for key in keys[:-1]:
        if isinstance(node, list):
            node = node[int(key)]
        elif isinstance(node, dict):
            if key not in node:
                raise ScenarioError(f"override path {dotted!r}: no key {key!r}")
            node = node[key]
        else:
            raise ScenarioError(f"override path {dotted!r} descends into a scalar")
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    elif isinstance(node, dict):
        node[last] = value
    else:
        raise ScenarioError(f"override path {dotted!r} descends into a scalar")


def _load_with_overrides(scenario_path: Path, overrides: dict[str, str]) -> SmdpModel:
    if not overrides:
        return load_scenario_path(scenario_path)
    doc = json.loads(scenario_path.read_text(encoding="utf-8"))
    for key, value in overrides.items():
        _apply_override(doc, key, value)
    return load_scenario(doc)


def _write_manifest(out: Path, command: str, scenario_path: Path, seed: RngSeed,
                    overrides: dict[str, str], options: dict[str, Any]) -> None:
    manifest = {
        "command": command,
        "scenario_path": str(scenario_path.resolve()),
        "seed": {"seed": seed.seed, "stream": seed.stream},
        "tool_version": __version__,
        "parameter_overrides": overrides,
        "output_dir": str(out),
        "options": options,
    }
    _write_json(out / MANIFEST_NAME, manifest)


def _policy_from_source(model: SmdpModel, source: str, tol: float) -> tuple[Policy, Any]:
    """(policy, values): solve fresh or read a policy file and evaluate it."""
    if source == "solve":
        solved = value_iteration(model, tol=tol)
        return solved.policy, solved.values
    raw = json.loads(Path(source).read_text(encoding="utf-8"))
    mapping = raw.get("policy", raw)
    choice = {int(s): Action.from_wire(a) for s, a in mapping.items()}
    policy = Policy(choice)
    policy.validate(model)
    return policy, policy_evaluation(model, policy)


def _default_target(model: SmdpModel, values, exclude: int | None) -> int:
    """Honeypot with the highest value, excluding `exclude`; absorbing as last resort."""
    candidates = [s for s in model.honeypots if s != exclude]
    if not candidates:
        return model.absorbing_state
    return max(candidates, key=lambda s: (values[s], -s))


# -- commands ---------------------------------------------------------------------


def run_solve(scenario_path: Path, out: Path, seed: RngSeed,
              overrides: dict[str, str], options: dict[str, Any]) -> int:
    model = _load_with_overrides(scenario_path, overrides)
    solved = value_iteration(model, tol=options["tol"], max_iter=options["max_iter"])
    report = {
        "values": {str(s): solved.values[s] for s in range(model.n_states)},
        "policy": {str(s): solved.policy.action(s).wire for s in range(model.n_states)},
        "beta": [
            {"state": s, "action": a.wire, "beta": b}
            for (s, a), b in sorted(solved.regulation.beta.items(), key=lambda kv: (kv[0][0], int(kv[0][1])))
        ],
        "beta_max": solved.regulation.beta_max,
        "iterations": solved.iterations,
        "residual_trace": solved.residual_trace,
    }
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "solve_report.json", report)
    _write_manifest(out, "solve", scenario_path, seed, overrides, options)
    return 0


def run_analyze(scenario_path: Path, out: Path, seed: RngSeed,
                overrides: dict[str, str], options: dict[str, Any]) -> int:
    model = _load_with_overrides(scenario_path, overrides)
    policy, values = _policy_from_source(model, options["policy"], options["tol"])
    gen = build_generator(model, policy)

    source = options["source"]
    if source is None:
        source = model.normal_state if model.normal_state is not None else 0
    target = options["target"]
    if target is None:
        target = _default_target(model, values, exclude=source)

    means, finite = mfpt_vector(gen, {target})
    t_ref = float(means[source]) if finite[source] else (
        float(np.max(means[finite])) if np.any(finite) else 1.0)
    grid = default_time_grid(5.0 * t_ref, points=options["grid_points"])

    p0 = np.zeros(model.n_states)
    p0[source] = 1.0
    occupancy = transient_occupancy(gen, p0, grid)
    occ_rows = [(t, *dist) for t, dist in zip(occupancy.times, occupancy.dist)]
    occ_header = ["t"] + [f"p_{s}" for s in range(model.n_states)]

    fpt = first_passage(gen, source, {target}, grid)
    fpt_rows = list(zip(fpt.grid, fpt.cdf, fpt.density))

    limiting = limiting_occupancy(gen, p0)

    summary: dict[str, Any] = {
        "source": source,
        "target": target,
        "limiting": {
            "dist": limiting.dist,
            "mixed": limiting.mixed,
            "classes": [
                {"states": list(c.states), "weight": c.weight, "stationary": c.stationary}
                for c in limiting.classes
            ],
        },
    }
    if finite[source]:
        threshold, probability = attraction_efficiency(model, policy, source, target)
        summary["attraction_efficiency"] = {
            "threshold": threshold, "probability": probability, "reachable": True,
        }
    else:
        summary["attraction_efficiency"] = {
            "threshold": "inf", "probability": None, "reachable": False,
        }

    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "occupancy.csv", occ_header, occ_rows)
    _write_csv(out / "fpt.csv", ["t", "cdf", "density"], fpt_rows)
    normal = model.normal_state
    if normal is not None:
        rows = []
        to_normal = mfpt_vector(gen, {normal})[0]
        for s in range(model.n_states):
            from_normal = 0.0 if s == normal else float(mfpt_vector(gen, {s})[0][normal])
            rows.append((s, from_normal, float(to_normal[s])))
        _write_csv(out / "mfpt.csv", ["state", "mfpt_from_normal", "mfpt_to_normal"], rows)
    _write_json(out / "analysis_summary.json", summary)
    _write_manifest(out, "analyze", scenario_path, seed, overrides, options)
    return 0


def run_sweep(scenario_path: Path, out: Path, seed: RngSeed,
              overrides: dict[str, str], options: dict[str, Any]) -> int:
    model = _load_with_overrides(scenario_path, overrides)
    kind = options["kind"]
    tol = options["tol"]
    out.mkdir(parents=True, exist_ok=True)
    if kind == "tradeoff":
        solved = value_iteration(model, tol=tol)
        target = options["target"]
        if target is None:
            target = _default_target(model, solved.values, exclude=model.normal_state)
        grid = tradeoff_surface(model, options["penetration_grid"], options["reward_grid"],
                                target=target, tol=tol)
        rows = [
            (float(p), float(r), float(grid.values[i, j]))
            for i, p in enumerate(grid.penetration)
            for j, r in enumerate(grid.reward)
        ]
        _write_csv(out / "tradeoff.csv", ["penetration", "reward", "value"], rows)
    else:
        sweep_fn = sweep_persistence if kind == "persistence" else sweep_intelligence
        table = sweep_fn(model, options["grid"], tol=tol)
        normal = model.normal_state
        rows = [
            (r.param, r.stationary_normal, r.v_normal, r.expected_utility)
            for r in table if r.start == normal
        ]
        _write_csv(out / f"sweep_{kind}.csv",
                   ["param", "stationary_normal", "v_normal", "expected_utility"], rows)
    _write_manifest(out, "sweep", scenario_path, seed, overrides, options)
    return 0


def run_simulate(scenario_path: Path, out: Path, seed: RngSeed,
                 overrides: dict[str, str], options: dict[str, Any]) -> int:
    model = _load_with_overrides(scenario_path, overrides)
    policy, values = _policy_from_source(model, options["policy"], 1e-8)
    samples = options["samples"]
    start = options["source"]
    if start is None:
        start = model.normal_state if model.normal_state is not None else 0
    target = options["target"]
    if target is None:
        target = _default_target(model, values, exclude=start)

    beta_max = check_regulation(model).beta_max
    horizon = options["horizon_epochs"] or horizon_for_tail(model, beta_max)

    log_limit = min(options["log_limit"], samples)
    lines = []
    occ_time: dict[int, float] = {}
    for i in range(log_limit):
        events = simulate_path(model, policy, start, horizon, seed.generator(0, i))
        for ev in events:
            occ_time[ev.state] = occ_time.get(ev.state, 0.0) + ev.sojourn
            lines.append(json.dumps(_jsonify({
                "rollout": i, "epoch": ev.epoch, "state": ev.state, "action": ev.action,
                "sojourn": ev.sojourn, "next_state": ev.next_state,
                "jump_reward_obs": ev.jump_reward_obs, "rate_reward_obs": ev.rate_reward_obs,
            }), sort_keys=True))

    utilities = batch_rollout_utilities(model, policy, start, horizon, samples, seed.generator(1))
    u_mean = float(utilities.mean())
    u_se = float(utilities.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0

    hitting = None
    if target != start:
        stats = estimate_hitting_times(model, policy, start, {target}, samples, seed.generator(2))
        deciles = (np.percentile(stats.samples, np.arange(10, 100, 10)).tolist()
                   if stats.n else [])
        hitting = {
            "source": start, "target": target, "mean": stats.mean, "se": stats.se,
            "n": stats.n, "n_censored": stats.n_censored, "horizon": stats.horizon,
            "deciles": deciles,
        }

    total_time = sum(occ_time.values())
    empirical_occupancy = {
        str(s): (occ_time.get(s, 0.0) / total_time if total_time > 0 else 0.0)
        for s in range(model.n_states)
    }
    summary = {
        "samples": samples,
        "start": start,
        "horizon_epochs": horizon,
        "discounted_utility": {"mean": u_mean, "se": u_se},
        "empirical_occupancy": empirical_occupancy,
        "hitting": hitting,
        "logged_rollouts": log_limit,
    }
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "trajectories.jsonl", "\n".join(lines) + ("\n" if lines else ""))
    _write_json(out / "sim_summary.json", summary)
    _write_manifest(out, "simulate", scenario_path, seed, overrides, options)
    return 0


def run_learn(scenario_path: Path, out: Path, seed: RngSeed,
              overrides: dict[str, str], options: dict[str, Any]) -> int:
    model = _load_with_overrides(scenario_path, overrides)
    decay = None
    if options["decay_start"] is not None:
        decay = (options["decay_start"], options["decay_end"])
    config = LearnConfig(
        kc=options["kc"],
        epsilon=options["epsilon"],
        steps=options["steps"],
        replications=options["replications"],
        seed=seed,
        epsilon_decay=decay,
        forbid_eject_exploration=options["forbid_eject"],
        start=options["start"],
        track_state=options["track_state"],
    )
    result = run_q_learning(model, config)
    policy = greedy_policy(result.table)
    value = policy_evaluation(model, policy)

    trace_rows = [
        (r.step, r.replication, r.tracked_q, r.epsilon, r.state, r.action.wire, r.sojourn)
        for r in result.records
    ]
    summary_rows = [
        (k, float(result.mean_q[k]), float(result.var_q[k])) for k in range(config.steps)
    ]
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "learn_trace.csv",
               ["step", "replication", "tracked_q", "epsilon", "state", "action", "sojourn"],
               trace_rows)
    _write_csv(out / "learn_summary.csv", ["step", "mean_q", "var_q"], summary_rows)
    _write_json(out / "learned_policy.json", {
        "policy": {str(s): policy.action(s).wire for s in range(model.n_states)},
        "value": {str(s): value[s] for s in range(model.n_states)},
        "resets": result.resets,
        "replications": config.replications,
        "steps": config.steps,
    })
    _write_manifest(out, "learn", scenario_path, seed, overrides, options)
    return 0


_RUNNERS = {
    "solve": run_solve,
    "analyze": run_analyze,
    "sweep": run_sweep,
    "simulate": run_simulate,
    "learn": run_learn,
}


def run_from_manifest(manifest_path: Path, out_override: Path | None = None) -> int:
    raw = json.loads(manifest_path.read_text(encoding="utf-8"))
    command = raw["command"]
    if command not in _RUNNERS:
        raise ScenarioError(f"manifest names unknown command {command!r}")
    seed = RngSeed(int(raw["seed"]["seed"]), int(raw["seed"]["stream"]))
    out = out_override if out_override is not None else Path(raw["output_dir"])
    return _RUNNERS[command](Path(raw["scenario_path"]), out, seed,
                             dict(raw["parameter_overrides"]), dict(raw["options"]))


# -- argument parsing -------------------------------------------------------------


def _parse_grid(spec: str) -> list[float]:
    """Either 'start:stop:count' (inclusive linspace) or a comma list."""
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"grid {spec!r} must be start:stop:count")
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        if n < 1:
            raise argparse.ArgumentTypeError("grid count must be at least 1")
        return np.linspace(lo, hi, n).tolist()
    return [float(x) for x in spec.split(",") if x.strip()]


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--scenario", required=True,
                     help="scenario file path or bundled name (desk3, honeynet13)")
    sub.add_argument("--out", default=".", help="output directory")
    sub.add_argument("--seed", type=int, default=0, help="base RNG seed")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="dotted-path scenario override, repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hpengage",
                                     description="Honeynet engagement planning toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("solve", help="optimal values and policy")
    _add_common(p)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=10000)

    p = subs.add_parser("analyze", help="occupancy, first passage, MFPT, attraction efficiency")
    _add_common(p)
    p.add_argument("--policy", default="solve", help="'solve' or a policy JSON path")
    p.add_argument("--source", type=int, default=None)
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--grid-points", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-8)

    p = subs.add_parser("sweep", help="persistence / intelligence / tradeoff sweeps")
    _add_common(p)
    p.add_argument("--kind", choices=["persistence", "intelligence", "tradeoff"], required=True)
    p.add_argument("--grid", type=str, default=None,
                   help="1-D grid for persistence/intelligence (start:stop:count or comma list)")
    p.add_argument("--penetration-grid", type=str, default="0:0.2:5")
    p.add_argument("--reward-grid", type=str, default="0.5:2.5:5")
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-8)

    p = subs.add_parser("simulate", help="sampled trajectories and Monte Carlo statistics")
    _add_common(p)
    p.add_argument("--policy", default="solve", help="'solve' or a policy JSON path")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--source", type=int, default=None)
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--log-limit", type=int, default=100,
                   help="rollouts written to trajectories.jsonl")
    p.add_argument("--horizon-epochs", type=int, default=None)

    p = subs.add_parser("learn", help="SMDP Q-learning with replication statistics")
    _add_common(p)
    # defaults resolve as: explicit flag > scenario file "learn" block > built-in
    p.add_argument("--kc", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--decay-start", type=int, default=None)
    p.add_argument("--decay-end", type=float, default=None)
    p.add_argument("--forbid-eject-exploration", action=argparse.BooleanOptionalAction,
                   default=None)
    p.add_argument("--start", type=int, default=None)
    p.add_argument("--track-state", type=int, default=None)

    p = subs.add_parser("rerun", help="re-execute a recorded run manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None, help="override the recorded output directory")
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "rerun":
        out = Path(args.out) if args.out else None
        return run_from_manifest(Path(args.manifest), out)

    overrides: dict[str, str] = {}
    for item in args.overrides:
        if "=" not in item:
            raise ScenarioError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key] = value
    scenario = _resolve_scenario(args.scenario)
    seed = RngSeed(args.seed, 0)
    out = Path(args.out)

    if args.command == "solve":
        options = {"tol": args.tol, "max_iter": args.max_iter}
    elif args.command == "analyze":
        options = {"policy": args.policy, "source": args.source, "target": args.target,
                   "grid_points": args.grid_points, "tol": args.tol}
    elif args.command == "sweep":
        if args.kind in ("persistence", "intelligence"):
            default = "0.25:2.5:10" if args.kind == "persistence" else "0:1:11"
            grid = _parse_grid(args.grid or default)
        else:
            grid = None
        options = {"kind": args.kind, "grid": grid,
                   "penetration_grid": _parse_grid(args.penetration_grid),
                   "reward_grid": _parse_grid(args.reward_grid),
                   "target": args.target, "tol": args.tol}
    elif args.command == "simulate":
        options = {"policy": args.policy, "samples": args.samples, "source": args.source,
                   "target": args.target, "log_limit": args.log_limit,
                   "horizon_epochs": args.horizon_epochs}
    elif args.command == "learn":
        options = {"kc": args.kc, "epsilon": args.epsilon, "steps": args.steps,
                   "replications": args.replications, "decay_start": args.decay_start,
                   "decay_end": args.decay_end, "forbid_eject": args.forbid_eject_exploration,
                   "start": args.start, "track_state": args.track_state}
    else:  # pragma: no cover
        raise ScenarioError(f"unknown command {args.command!r}")
    return _RUNNERS[args.command](scenario, out, seed, overrides, options)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ScenarioError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
