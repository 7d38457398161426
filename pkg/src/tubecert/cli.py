"""Command-line surface for collection, training, benchmarks, and debugging."""

import argparse
import csv
import json
import sys
import time

import numpy as np

from tubecert import certifier, envs, models, orchestrator, safe_set


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(part) for part in text.split(",") if part.strip()])
    except ValueError:
        raise orchestrator.ConfigError(f"expected comma-separated floats, got {text!r}")


def _parse_ints(text: str) -> list:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise orchestrator.ConfigError(f"expected comma-separated integers, got {text!r}")


def _cmd_collect(args) -> int:
    env = envs.make_env(args.env, noise_scale=args.noise, seed=args.seed)
    backup = envs.backup_policy(env)
    rng = np.random.default_rng(args.seed + 1)
    ds = orchestrator.collect_initial(env, backup, steps=args.steps, rng=rng)
    ds.save_jsonl(args.out)
    print(json.dumps({"env": args.env, "steps": len(ds), "violations": 0,
                      "out": args.out}))
    return 0


def _cmd_train(args) -> int:
    config = orchestrator.RunConfig.from_file(args.config)
    if args.out_dir is not None:
        config.out_dir = args.out_dir
    if args.seed is not None:
        config.seed = args.seed
    config.validate()
    metrics = orchestrator.run_training(config)
    print(json.dumps(metrics.summary))
    return 0


def _cmd_bench(args) -> int:
    config = orchestrator.RunConfig.from_file(args.config)
    horizons = _parse_ints(args.horizons) if args.horizons else None
    widths = _parse_ints(args.widths) if args.widths else None
    sizes = _parse_ints(args.ensemble_sizes) if args.ensemble_sizes else None
    if not (horizons or widths or sizes):
        raise orchestrator.ConfigError(
            "bench needs at least one of --horizons/--widths/--ensemble-sizes")
    rows = orchestrator.bench_complexity(config, horizons, widths, sizes,
                                         trials=args.trials)
    if args.out:
        orchestrator.write_bench_csv(rows, args.out)
    for row in rows:
        print(json.dumps(row))
    return 0


def _cmd_describe(args) -> int:
    spec = envs.make_env(args.env).spec
    defaults = orchestrator.RunConfig(args.env).to_dict()
    print(json.dumps({
        "kind": spec.kind,
        "n_x": spec.n_x,
        "n_u": spec.n_u,
        "dt": spec.dt,
        "episode_len": spec.episode_len,
        "constrained_coords": list(spec.constrained_coords),
        "state_polytope": {"H": spec.state_polytope.H.tolist(),
                           "d": spec.state_polytope.d.tolist()},
        "action_polytope": {"H": spec.action_polytope.H.tolist(),
                            "d": spec.action_polytope.d.tolist()},
        "physical_params": {k: v for k, v in spec.params.items()},
        "run_defaults": defaults,
    }, indent=2))
    return 0


def _finite_or_none(value):
    value = float(value)
    return value if np.isfinite(value) else None


def _cmd_certify_once(args) -> int:
    ensemble = models.load_ensemble(args.model)
    spec = envs.make_env(args.env).spec
    if ensemble.n_x != spec.n_x or ensemble.n_u != spec.n_u:
        raise orchestrator.ConfigError(
            f"checkpoint dimensions ({ensemble.n_x}, {ensemble.n_u}) do not "
            f"match {args.env} ({spec.n_x}, {spec.n_u})")
    x_t = _parse_vector(args.state)
    u_t = _parse_vector(args.action)
    if x_t.size != spec.n_x or u_t.size != spec.n_u:
        raise orchestrator.ConfigError(
            f"state/action must have sizes {spec.n_x}/{spec.n_u}")
    if args.terminal:
        with open(args.terminal) as fh:
            history = json.load(fh)
        if not history:
            raise orchestrator.ConfigError(f"no safe sets in {args.terminal}")
        terminal = safe_set.SafeSetEstimate.from_dict(
            history[args.terminal_epoch]).polytope
    else:
        terminal = spec.state_polytope
    cfg = certifier.CertifierConfig(
        horizon=args.horizon,
        feedback=np.full((spec.n_u, spec.n_x), args.k_fill),
        tol=args.tol)
    trace = [] if args.trace else None
    t0 = time.perf_counter()
    result = certifier.certify(ensemble, x_t, u_t, spec.state_polytope,
                               spec.action_polytope, terminal, cfg, trace=trace)
    solve_ms = (time.perf_counter() - t0) * 1000.0
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("iteration", "objective", "max_violation", "penalty"))
            for row in trace:
                w.writerow(row)
    print(json.dumps({
        "feasible": result.feasible,
        "action": None if result.action is None else result.action.tolist(),
        "proposal": u_t.tolist(),
        "objective": _finite_or_none(result.objective),
        "max_violation": _finite_or_none(result.max_violation),
        "iterations": result.iterations,
        "rollouts": result.rollouts,
        "mode": result.mode,
        "solve_ms": solve_ms,
        "diagnostics": result.diagnostics,
    }))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tubecert",
        description="Safe-exploration training with ensemble tube certification")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="roll the backup controller and save JSONL")
    p.add_argument("--env", required=True, choices=envs.ENV_KINDS)
    p.add_argument("--steps", type=int, default=8000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_collect)

    p = sub.add_parser("train", help="run the full training loop")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("bench", help="cold-start solve-time sweeps")
    p.add_argument("--config", required=True)
    p.add_argument("--horizons", default=None)
    p.add_argument("--widths", default=None)
    p.add_argument("--ensemble-sizes", default=None)
    p.add_argument("--trials", type=int, default=30)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("describe", help="print environment and default knobs")
    p.add_argument("--env", required=True, choices=envs.ENV_KINDS)
    p.set_defaults(fn=_cmd_describe)

    p = sub.add_parser("certify-once", help="solve one certification instance")
    p.add_argument("--model", required=True)
    p.add_argument("--env", required=True, choices=envs.ENV_KINDS)
    p.add_argument("--state", required=True)
    p.add_argument("--action", required=True)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--k-fill", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--terminal", default=None,
                   help="safe-set history JSON to take the terminal set from")
    p.add_argument("--terminal-epoch", type=int, default=-1)
    p.add_argument("--trace", default=None, help="write solver trace CSV here")
    p.set_defaults(fn=_cmd_certify_once)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except orchestrator.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except orchestrator.TrainingAbort as exc:
        print(f"{exc} (report: {exc.report_path})", file=sys.stderr)
        return 3
    except orchestrator.CollectionError as exc:
        print(f"collection aborted: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
