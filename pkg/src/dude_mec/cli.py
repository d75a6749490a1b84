"""Command-line entry point: ``simulate --config cfg.json --out results/``."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .baselines import SchemeId
from .harness import ExperimentConfig, emit_outputs, load_config, run_experiment
from .topology import ConfigError


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="simulate",
        description="Monte-Carlo comparison of coupled and decoupled UL/DL access schemes.")
    ap.add_argument("--config", help="JSON experiment config; defaults apply when omitted")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--schemes", nargs="+", metavar="SCHEME",
                    help=f"subset of {[s.value for s in SchemeId]}")
    ap.add_argument("--drops", type=int, help="drops per sweep point")
    ap.add_argument("--sweep-sbs", type=_int_list, help="SBS counts, e.g. 10,20,30")
    ap.add_argument("--seed", type=int, help="master seed")
    ap.add_argument("--workers", type=int, help="parallel worker processes")
    ap.add_argument("--plots", action="store_true", help="also write SVG plots")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args) -> ExperimentConfig:
    data = load_config(args.config).to_dict() if args.config else ExperimentConfig().to_dict()
    if args.schemes:
        data["schemes"] = args.schemes
    if args.drops is not None:
        data["n_drops"] = args.drops
    if args.sweep_sbs is not None:
        data["sweep_sbs"] = args.sweep_sbs
    if args.seed is not None:
        data["seed"] = args.seed
    if args.workers is not None:
        data["workers"] = args.workers
    data["output_dir"] = args.out
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"simulate: config error: {exc}", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    result = run_experiment(cfg)
    try:
        paths = emit_outputs(result, cfg.output_dir, plots=args.plots)
    except OSError as exc:
        print(f"simulate: cannot write outputs: {exc}", file=sys.stderr)
        return 1
    n_fail = len(result.failures())
    print(f"{len(result.drops)} drops in {time.perf_counter() - t0:.1f}s, "
          f"{n_fail} scheme failures; wrote {', '.join(str(p) for p in paths)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
