"""Command-line entry point: ``simulate``, ``sweep`` and ``verify``.

Exit status is 0 when everything passes, 1 when a check fails or the
simulation hits a non-finite state, and 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..errors import InvalidInputError, NonFiniteStateError
from . import output, verify
from .config import load_config
from .scenario import first_ordering_violation, run_matched_comparison, run_scenario, run_sweep

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _parse_values(text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("at least one value is required")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", type=Path, default=Path("logitdyn_out"), help="directory for outputs")

    parser = argparse.ArgumentParser(prog="logitdyn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[common], help="run the two-phase toy scenario")
    sim.add_argument("--config", type=Path, required=True)
    sim.add_argument("--practice", action="store_true", help="run negative-rate updates on the negated loss")

    sw = sub.add_parser("sweep", parents=[common], help="repeat the scenario over rho or eta values")
    sw.add_argument("--config", type=Path, required=True)
    sw.add_argument("--axis", choices=("rho", "eta"), required=True)
    sw.add_argument("--values", type=_parse_values, required=True, help="comma-separated list")
    sw.add_argument("--practice", action="store_true")

    ver = sub.add_parser("verify", parents=[common], help="run invariant and oracle batteries")
    ver.add_argument("--suite", choices=verify.SUITES + ("all",), default="all")
    ver.add_argument("--inject-fault", choices=verify.FAULTS, default=None, help="corrupt the main path (testing)")
    return parser


def _simulate(args) -> int:
    cfg = load_config(args.config)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = run_scenario(cfg, practice=args.practice)
    except NonFiniteStateError as exc:
        output.emit_json({"error": str(exc), "step": exc.step, "dump": exc.dump}, args.out_dir / "nonfinite.json")
        print(f"error: non-finite state at step {exc.step}", file=sys.stderr)
        return EXIT_FAIL
    output.emit_csv(result, args.out_dir / "trajectories.csv")
    for sel in output.SELECTORS:
        output.emit_svg(result, sel, args.out_dir / f"{sel}.svg")
    summary = {"config": cfg.to_dict(), "practice": args.practice, "mu": float(result.phi @ result.phi)}
    if any(o.optimizer.value != "GD" and o.rho for o in cfg.optimizers) and cfg.post_steps:
        steps = run_matched_comparison(cfg)
        summary["matched_steps"] = len(steps)
        summary["first_ordering_violation"] = first_ordering_violation(steps)
    summary["final_probs"] = {tag: recs[-1].probs for tag, recs in result.trajectories.items()}
    output.emit_json(summary, args.out_dir / "summary.json")
    print(f"wrote {args.out_dir / 'trajectories.csv'}")
    return EXIT_OK


def _sweep(args) -> int:
    base = load_config(args.config)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    try:
        sweep = run_sweep(base, args.axis, args.values, practice=args.practice)
    except NonFiniteStateError as exc:
        print(f"error: non-finite state at step {exc.step}", file=sys.stderr)
        return EXIT_FAIL
    for k, cell in enumerate(sweep.cells):
        output.emit_csv(cell.result, args.out_dir / f"cell_{k}.csv")
    output.emit_sweep_csv(sweep, args.out_dir / "sweep.csv")
    output.emit_json({"axis": sweep.axis.value, "rows": sweep.rows(), "decay_ratios": sweep.decay_ratios},
                     args.out_dir / "sweep.json")
    print(f"wrote {args.out_dir / 'sweep.csv'}")
    return EXIT_OK


def _verify(args) -> int:
    reports = verify.run_suite(args.suite, fault=args.inject_fault)
    summary = verify.summarize(reports)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    output.emit_json(
        {"suite": args.suite, "fault": args.inject_fault, "pass": all(s.passed for s in summary),
         "checks": summary, "reports": reports},
        args.out_dir / f"verify_{args.suite}.json",
    )
    for s in summary:
        print(f"{'PASS' if s.passed else 'FAIL'} {s.quantity} ({s.trials - s.failures}/{s.trials})")
    failing = [s.quantity for s in summary if not s.passed]
    if failing:
        print("failed: " + ", ".join(failing), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _join_values(argv: list) -> list:
    """Let ``--values -0.1,0.2`` through; argparse would read a leading '-' as an option."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok == "--values":
            nxt = next(it, None)
            out.append(tok if nxt is None else f"--values={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_join_values(argv))
    handler = {"simulate": _simulate, "sweep": _sweep, "verify": _verify}[args.command]
    try:
        return handler(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
