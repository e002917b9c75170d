#!/usr/bin/env python3
"""Reproduce the analytic attention-cost table and the resolution sweep.

Prints a comparison of the model's FLOP counts at 1024x1024 against the
reference values, then a dense-vs-core sweep over resolutions for
each preset. Everything is closed-form; runs in well under a second.
"""

import argparse

from veca.analysis import attention_path_flops, cost_csv_lines, flop_sweep

REFERENCE_GFLOPS = {
    ("small", "dense"): 30.67,
    ("small", "core"): 5.72,
    ("base", "dense"): 71.02,
    ("base", "core"): 21.25,
    ("large", "dense"): 103.29,
    ("large", "core"): 37.06,
}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--budget", type=int, default=64)
    parser.add_argument(
        "--resolutions", default="256,512,768,1024", help="comma-separated sweep resolutions"
    )
    args = parser.parse_args()
    resolutions = [int(r) for r in args.resolutions.split(",")]

    print("== reference comparison at 1024x1024 (FLOPs = 2 x MACs) ==")
    print(f"{'preset':<8} {'mode':<16} {'GFLOPs':>10} {'reference':>10} {'rel err':>9}")
    for (preset, mode), ref in REFERENCE_GFLOPS.items():
        report = attention_path_flops(preset, 1024, mode, budget=args.budget)
        rel = (report.flops / 1e9 - ref) / ref
        print(f"{preset:<8} {report.mode:<16} {report.flops / 1e9:>10.2f} {ref:>10.2f} {rel:>8.3%}")
    ratio = attention_path_flops("small", 1024, "core", budget=args.budget).ratio
    print(f"\nsmall-preset dense/core reduction at 1024: {ratio:.2f}x")

    for preset in ("small", "base", "large"):
        print(f"\n== sweep: {preset} ==")
        for line in cost_csv_lines(flop_sweep(preset, resolutions, args.budget)):
            print(line)


if __name__ == "__main__":
    main()
