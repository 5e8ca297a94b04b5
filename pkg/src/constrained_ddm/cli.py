"""Command-line entry point: run, ablate, scale and eval."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .ddm import WorkerFailure
from .network import ConfigurationError

log = logging.getLogger("constrained_ddm")


def _progress(every: int):
    def show(n, diags, errs):
        if every and (n % every == 0) and errs is not None:
            glob = ", ".join(f"{k}={v['relative_l2']:.3e}" for k, v in errs["global"].items())
            log.info("outer %d: %s", n, glob)

    return show


def cmd_run(args) -> int:
    cfg = harness.RunConfig.load(args.config) if args.config else harness.RunConfig.for_problem(args.problem)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.backend:
        cfg.backend = args.backend
    if args.outer is not None:
        cfg.outer = args.outer
    if args.output:
        cfg.output_dir = args.output
    report = harness.run(cfg, progress=_progress(args.log_every))
    print(json.dumps(harness._jsonable({"errors": report.errors, "timing": report.timing}), indent=2))
    return 0


def cmd_ablate(args) -> int:
    cfg = harness.RunConfig.for_problem(args.problem)
    if args.outer is not None:
        cfg.outer = args.outer
    table = harness.ablation_interface_loss(cfg, trials=args.trials)
    print(f"{'loss':8s} {'mean':>12s} {'std':>12s}   reference")
    for kind, row in table.items():
        ref = harness.REFERENCE_ABLATION.get(kind)
        ref_s = f"{ref[0]:.2e} +- {ref[1]:.2e}" if ref else ""
        print(f"{kind:8s} {row['mean']:12.4e} {row['std']:12.4e}   {ref_s}")
    return 0


def cmd_scale(args) -> int:
    cfg = harness.RunConfig.for_problem(args.problem, inner_cap=args.inner, epoch_min=args.inner)
    cfg.backend = args.backend
    rows = harness.scaling_timers(cfg, mode=args.mode, max_ranks=args.max_ranks)
    for r in rows:
        print(json.dumps(r))
    return 0


def cmd_eval(args) -> int:
    errs = harness.evaluate_checkpoint(args.checkpoint)
    print(json.dumps(harness._jsonable(errs["global"]), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="constrained-ddm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one configuration")
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--problem", default="poisson-low", help="catalog problem when no config is given")
    p.add_argument("--seed", type=int)
    p.add_argument("--backend", choices=["sequential", "threads", "processes"])
    p.add_argument("--outer", type=int, help="override the number of outer iterations")
    p.add_argument("--output", help="directory for report.json, trace.csv, field.csv")
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="compare interface-loss variants")
    p.add_argument("--problem", default="step-source")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--outer", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("scale", help="weak or strong scaling timers")
    p.add_argument("--mode", choices=["weak", "strong"], default="weak")
    p.add_argument("--max-ranks", type=int, default=8)
    p.add_argument("--problem", default="poisson-low")
    p.add_argument("--backend", choices=["sequential", "threads", "processes"], default="threads")
    p.add_argument("--inner", type=int, default=5, help="inner epochs per outer iteration")
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("eval", help="re-evaluate a finished run directory")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except WorkerFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
