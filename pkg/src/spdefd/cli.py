"""Command-line harness.

Subcommands:
    solve       run the scheme once on the coarsest mesh and export the
                trajectory (csv or binary)
    converge    unaccelerated convergence study over the mesh ladder
    accelerate  extrapolated convergence study (weights chosen by base/level)
    correctors  corrector system, odd-corrector check, expansion-residual decay
    selfcheck   weight identities, summation by parts, dense-solve oracle

Exit codes: 0 pass, 1 acceptance fail, 2 solver failure, 3 config error.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .experiments import (
    ConfigError,
    build_problem,
    build_scheme,
    emit_outputs,
    ladder_grids,
    load_config,
    run_convergence_experiment,
    run_corrector_experiment,
    selfcheck,
)
from .stepper import (
    SolveFailure,
    export_trajectory_binary,
    export_trajectory_csv,
    run_space_time_scheme,
)
from .wiener import sample_increments

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_SOLVER = 2
EXIT_CONFIG = 3


def _add_common(parser, config_required=True):
    parser.add_argument("--config", required=config_required,
                        help="experiment configuration file")
    parser.add_argument("--out", default=None, help="output directory "
                        "(overrides the config)")
    parser.add_argument("--seeds", default=None,
                        help="comma-separated seed list (overrides the config)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (overrides the config)")
    parser.add_argument("--format", choices=("csv", "binary"), default=None,
                        help="trajectory output format (overrides the config)")


def _load_spec(args):
    spec = load_config(args.config)
    overrides = {}
    if args.out is not None:
        overrides["out"] = args.out
    if args.seeds is not None:
        from .experiments import _parse_seeds
        overrides["seeds"] = _parse_seeds(args.seeds)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("threads must be >= 1")
        overrides["threads"] = args.threads
    if args.format is not None:
        overrides["format"] = args.format
    return replace(spec, **overrides) if overrides else spec


def _cmd_solve(args) -> int:
    spec = _load_spec(args)
    problem = build_problem(spec)
    scheme = build_scheme(spec, problem)
    grid = ladder_grids(spec, problem)[0]
    tau = problem.T / spec.n
    seed = spec.seeds[0]
    increments = (sample_increments(spec.n, problem.d1, tau, seed)
                  if problem.d1 > 0 else None)
    try:
        traj = run_space_time_scheme(problem, scheme, grid, spec.n, increments)
    except SolveFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    if spec.format == "binary":
        path = out / "trajectory.bin"
        export_trajectory_binary(traj, path)
    else:
        path = out / "trajectory.csv"
        export_trajectory_csv(traj, path)
    print(f"solved {spec.problem} on {grid.shape} points, n={spec.n}; "
          f"wrote {path}")
    return EXIT_PASS


def _run_study(args, accelerate: bool) -> int:
    spec = _load_spec(args)
    result = run_convergence_experiment(spec, accelerate=accelerate)
    paths = emit_outputs(result, spec.out)
    for line in _summary_lines(result):
        print(line)
    print(f"wrote {', '.join(str(p) for p in paths)}")
    if result.failed:
        print(f"solver failure: {result.failure}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_PASS if result.passed else EXIT_FAIL


def _summary_lines(result):
    lines = [f"{result.kind} study: {result.spec.problem} "
             f"({result.spec.scheme}), n={result.spec.n}, "
             f"seeds={list(result.spec.seeds)}"]
    if result.report is not None:
        rep = result.report
        for idx, h in enumerate(rep.hs):
            pairwise = ("    --" if idx == 0
                        else f"{rep.pairwise_orders[idx - 1]:6.3f}")
            lines.append(f"  h={h:<12.6g} sup={rep.sup_errors[idx]:<12.6g} "
                         f"pairwise={pairwise}")
        lines.append(f"  least-squares order {rep.ls_order:.4f}"
                     + (f" (expected {rep.expected_order} "
                        f"+- {rep.tolerance if rep.tolerance is not None else 0.25})"
                        if rep.expected_order is not None else ""))
        for note in rep.notes:
            lines.append(f"  note: {note}")
        lines.append(f"  result: {'PASS' if result.passed else 'FAIL'}")
    return lines


def _cmd_correctors(args) -> int:
    spec = _load_spec(args)
    result = run_corrector_experiment(spec)
    paths = emit_outputs(result, spec.out)
    cs = result.extras.pop("corrector_set", None)
    if cs is not None:
        from .correctors import export_corrector_set
        paths += export_corrector_set(cs, spec.out, "corrector", spec.format)
    for line in _summary_lines(result):
        print(line)
    ratios = result.extras.get("odd_corrector_ratios", {})
    for order, ratio in sorted(ratios.items()):
        print(f"  odd corrector {order}: sup ratio {ratio:.3e}")
    print(f"wrote {', '.join(str(p) for p in paths)}")
    if result.failed:
        print(f"solver failure: {result.failure}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_PASS if result.passed else EXIT_FAIL


def _cmd_selfcheck(_args) -> int:
    ok = True
    for name, passed, detail in selfcheck():
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        ok = ok and passed
    return EXIT_PASS if ok else EXIT_FAIL


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spdefd",
        description="Finite-difference solver and convergence harness for "
                    "degenerate parabolic SPDEs on a periodic torus")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run one trajectory and export it")
    _add_common(p_solve)
    p_conv = sub.add_parser("converge", help="unaccelerated convergence study")
    _add_common(p_conv)
    p_acc = sub.add_parser("accelerate", help="extrapolated convergence study")
    _add_common(p_acc)
    p_corr = sub.add_parser("correctors", help="corrector and residual study")
    _add_common(p_corr)
    p_self = sub.add_parser("selfcheck", help="run built-in structural checks")
    _add_common(p_self, config_required=False)

    args = parser.parse_args(argv)
    try:
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "converge":
            return _run_study(args, accelerate=False)
        if args.command == "accelerate":
            return _run_study(args, accelerate=True)
        if args.command == "correctors":
            return _cmd_correctors(args)
        return _cmd_selfcheck(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolveFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
