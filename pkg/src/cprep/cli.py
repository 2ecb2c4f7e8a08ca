"""Command line: ``cprep run | report | rm``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_config

EXIT_OK, EXIT_FAILED, EXIT_INVALID = 0, 1, 2


def _err(msg: str) -> None:
    print(f"cprep: {msg}", file=sys.stderr)


def _seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")


def cmd_run(args) -> int:
    from .runner import output_root, run_config

    try:
        cfg = load_config(Path(args.config).read_text(encoding="utf-8"))
        if args.seeds:
            cfg = cfg.replace(seeds=args.seeds)
    except OSError as exc:
        _err(f"cannot read config: {exc}")
        return EXIT_INVALID
    except ConfigError as exc:
        _err(f"invalid config: {exc}")
        return EXIT_INVALID
    if args.parallel < 1:
        _err("--parallel must be at least 1")
        return EXIT_INVALID
    root = output_root(cfg, args.out)
    results = run_config(cfg, out_root=root, parallel=args.parallel,
                         log=lambda m: print(m, flush=True))
    failed = [(s, e) for s, e in results if e]
    for s, e in failed:
        _err(f"seed {s} FAILED: {e} (see {root / cfg.name / str(s) / 'FAILED'})")
    print(f"wrote {root / cfg.name}")
    return EXIT_FAILED if failed else EXIT_OK


def cmd_report(args) -> int:
    from .runner import ReportError, build_report, format_table, load_runs, write_report

    try:
        runs = load_runs(args.dirs)
        report = build_report(runs, n_resamples=args.resamples)
    except ReportError as exc:
        _err(str(exc))
        return EXIT_INVALID
    out = Path(args.out) if args.out else Path(args.dirs[0]) / "report"
    write_report(report, out, svg=args.svg)
    sys.stdout.write(format_table(report))
    print(f"\nreport written to {out}")
    return EXIT_OK


def cmd_rm(args) -> int:
    from .planning import ConvergenceError, greedy_policy, value_iteration
    from .rm import RmSyntaxError, RmValidationError, parse_rm, rm_to_dot, validate_rm

    try:
        text = Path(args.file).read_text(encoding="utf-8")
    except OSError as exc:
        _err(f"cannot read {args.file}: {exc}")
        return EXIT_INVALID
    try:
        rm = parse_rm(text, validate=args.action != "validate")
    except RmSyntaxError as exc:
        _err(f"{args.file}: {exc}")
        return EXIT_INVALID
    except RmValidationError as exc:
        for d in exc.diagnostics:
            _err(f"{args.file}: {d.severity}: {d.kind}: {d.message}")
        return EXIT_INVALID

    if args.action == "validate":
        diags = validate_rm(rm)
        for d in diags:
            print(f"{d.severity}: {d.kind}: {d.message}")
        errors = sum(d.severity == "error" for d in diags)
        print(f"{rm.n_states} states, {rm.n_transitions} transitions, "
              f"{errors} error(s), {len(diags) - errors} warning(s)")
        return EXIT_INVALID if errors else EXIT_OK

    if args.action == "viz":
        sys.stdout.write(rm_to_dot(rm, Path(args.file).stem.replace("-", "_") or "rm"))
        return EXIT_OK

    if not 0.0 <= args.gamma < 1.0:
        _err("--gamma must lie in [0, 1)")
        return EXIT_INVALID
    try:
        table = value_iteration(rm, args.gamma)
    except ConvergenceError as exc:
        _err(str(exc))
        return EXIT_FAILED
    policy = greedy_policy(rm, table)
    for u, name in enumerate(rm.states):
        print(f"V*({name})={table.values[u]:.6g}")
    print(f"# {table.iterations_run} iterations, residual {table.residual:.3g}")
    for u, name in enumerate(rm.states):
        for k in policy.choices.get(u, ()):
            tr = rm.transitions[u][k]
            print(f"{name} -> {rm.states[tr.target]}  [{tr.guard.render(rm.vocabulary)}]  r={tr.reward:g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cprep", description="Reward-machine transfer experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train and evaluate every seed of a config")
    r.add_argument("--config", required=True)
    r.add_argument("--seeds", type=_seeds, default=None, help="comma-separated, overrides the config")
    r.add_argument("--out", default=None, help="output root (default: $CPREP_OUTPUT_ROOT or config)")
    r.add_argument("--parallel", type=int, default=1)
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="aggregate run directories")
    rep.add_argument("dirs", nargs="+")
    rep.add_argument("--out", default=None, help="default: <first dir>/report")
    rep.add_argument("--svg", action="store_true", help="also plot TTT against threshold")
    rep.add_argument("--resamples", type=int, default=2000)
    rep.set_defaults(func=cmd_report)

    m = sub.add_parser("rm", help="inspect a reward-machine file")
    m.add_argument("action", choices=("validate", "viz", "plan"))
    m.add_argument("file")
    m.add_argument("--gamma", type=float, default=0.99)
    m.set_defaults(func=cmd_rm)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
