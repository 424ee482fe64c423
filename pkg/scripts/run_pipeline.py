#!/usr/bin/env python3
"""End-to-end experiment: simulate -> annotate -> train -> evaluate.

Equivalent to running the four CLI subcommands in order; prints stage
timings and the final confusion-matrix report.

    python3 scripts/run_pipeline.py --out out [--config configs/default.yaml]
        [--seed N] [--threads N] [--final]
"""

import argparse
import sys
import time

from errexplain.cli import cmd_annotate, cmd_evaluate, cmd_simulate, cmd_train
from errexplain.config import load_config


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default="out")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--final", action="store_true",
                        help="also retrain a deployment model on all data")
    args = parser.parse_args()

    config = load_config(
        args.config,
        {"seed": args.seed, "out_dir": args.out, "train.threads": args.threads},
    )
    for name, stage in (
        ("simulate", cmd_simulate),
        ("annotate", cmd_annotate),
        ("train", lambda c: cmd_train(c, final=args.final)),
        ("evaluate", cmd_evaluate),
    ):
        t0 = time.monotonic()
        code = stage(config)
        print(f"[{name}] {time.monotonic() - t0:.1f}s")
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
