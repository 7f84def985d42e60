"""Command line entry point: ``autofocal {train,compare,gamma-trace,gen-data}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from ..data import generate, save_csv
from ..errors import DomainError, TrainingAborted, UsageError
from ..focal_core import GammaSchedule
from .config import load_config, parse_dataset_spec
from .runner import compare, run, write_gamma_trace

log = logging.getLogger("autofocal")


def _grid(text: str):
    """``start:stop:count`` (inclusive linspace) or a comma-separated list."""
    if ":" in text:
        start, stop, count = text.split(":")
        return list(np.linspace(float(start), float(stop), int(count)))
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autofocal", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one experiment config")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides the config's 'out')")
    p.add_argument("--plots", action="store_true", help="also write SVG plots")

    p = sub.add_parser("compare", help="train several configs that differ only in their loss")
    p.add_argument("configs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("gamma-trace", help="tabulate gamma schedules over a p_hat grid")
    p.add_argument("--schedule", action="append", required=True,
                   help="info, quantile:<h> or fixed:<gamma>; repeatable")
    p.add_argument("--grid", default="0.01:0.99:99", help="start:stop:count or comma list")
    p.add_argument("--clamp-max", type=float, default=10.0)
    p.add_argument("--out", required=True)
    p.add_argument("--plots", action="store_true")

    p = sub.add_parser("gen-data", help="generate a dataset from a spec file and write CSV splits")
    p.add_argument("spec")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            cfg = load_config(args.config)
            out = args.out or cfg.out
            if not out:
                raise DomainError("no output directory: pass --out or set 'out' in the config")
            res = run(cfg, out, plots=args.plots or cfg.plots)
            print(json.dumps(res.summary, indent=2, sort_keys=True))
        elif args.command == "compare":
            configs = [load_config(p) for p in args.configs]
            compare(configs, args.out, jobs=args.jobs)
            with open(os.path.join(args.out, "comparison.txt"), encoding="utf-8") as fh:
                print(fh.read(), end="")
        elif args.command == "gamma-trace":
            schedules = [GammaSchedule.parse(s, args.clamp_max) for s in args.schedule]
            files = write_gamma_trace(schedules, _grid(args.grid), args.out, plot=args.plots)
            print("\n".join(files.values()))
        elif args.command == "gen-data":
            with open(args.spec, encoding="utf-8") as fh:
                spec = parse_dataset_spec(fh.read(), args.spec)
            os.makedirs(args.out, exist_ok=True)
            splits = generate(spec)
            for name, ds in (("train", splits.train), ("val", splits.val), ("test", splits.test)):
                path = os.path.join(args.out, f"{name}.csv")
                save_csv(ds, path)
                print(f"{path}: {len(ds)} samples")
    except (DomainError, UsageError, TrainingAborted, OSError, ValueError) as exc:
        print(f"autofocal: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
