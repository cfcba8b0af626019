#!/usr/bin/env python3
"""Dark-exposure start-stop histograms for several gate widths.

With the source blocked, every receiver click is dark-triggered, so the
click-to-leak delay histogram profiles the backflash emission alone.
"""

import argparse
from pathlib import Path

from cowqkd.experiment import ExperimentConfig, emit_timing_correlation


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--widths", default="2000,4000,6000")
    ap.add_argument("--clicks", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--out", type=Path, default=Path("out/correlation"))
    args = ap.parse_args()

    cfg = ExperimentConfig(seed=args.seed)
    widths = [int(w) for w in args.widths.split(",") if w.strip()]
    hists = emit_timing_correlation(cfg, widths, clicks_per_width=args.clicks, out_dir=args.out)
    prev = None
    for w, h in hists.items():
        growth = "" if prev is None else f"  ({100 * (h.std_ps() - prev) / prev:+.1f}% vs previous)"
        print(f"gate {w/1000:.0f} ns: {h.total()} stops, spread {h.std_ps():.0f} ps{growth}")
        prev = h.std_ps()
    print(f"histograms in {args.out}")


if __name__ == "__main__":
    main()
