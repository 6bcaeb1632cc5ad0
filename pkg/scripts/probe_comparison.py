#!/usr/bin/env python3
"""Seed sweep comparing activation-weighted probes against mean pooling.

For each seed: generate one planted trace, replay it twice (probe
act vs mean, everything else equal), and collect overall recall and
score perplexity. Prints a per-seed table plus win fractions, and can
dump the raw comparison as JSON.
"""

import argparse
import json

from kvprobe import (EngineConfig, PlantedSpec, SyntheticConfig,
                     build_report, compare_runs, generate_synthetic,
                     run_trace)


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=25)
    p.add_argument("--windows", type=int, default=12)
    p.add_argument("--decode-steps", type=int, default=5)
    p.add_argument("--planted", type=int, default=3)
    p.add_argument("--signal", type=float, default=0.8)
    p.add_argument("--anchor-fraction", type=float, default=0.10)
    p.add_argument("--anchor-scale", type=float, default=4.0)
    p.add_argument("--drift", type=float, default=3.0)
    p.add_argument("--budget", type=int, default=256)
    p.add_argument("--cutoff", choices=["dynamic", "fixed"],
                   default="dynamic")
    p.add_argument("--out", default=None,
                   help="write the paired comparison JSON here")
    return p.parse_args()


def main():
    args = parse_args()
    cfg = SyntheticConfig(num_windows=args.windows,
                          num_decode_steps=args.decode_steps)
    spec = PlantedSpec.auto(cfg, per_step=args.planted, signal=args.signal,
                            anchor_fraction=args.anchor_fraction,
                            anchor_scale=args.anchor_scale,
                            drift_scale=args.drift)
    print(f"probe windows {spec.probe_windows}, "
          f"{args.planted} early targets per step, budget {args.budget}")
    print(f"{'seed':>4}  {'recall act':>10}  {'recall mean':>11}  "
          f"{'ppl act':>8}  {'ppl mean':>8}")
    acc, base = [], []
    for seed in range(args.seeds):
        trace = generate_synthetic(cfg, spec, seed=seed)
        row = {}
        for mode in ("act", "mean"):
            ec = EngineConfig(d=cfg.d, layers=cfg.layers, heads=cfg.heads,
                              window=cfg.window, budget=args.budget,
                              probe_mode=mode, cutoff_mode=args.cutoff)
            rep = build_report(run_trace(trace, ec), trace.ground_truth,
                               trace_sha256=f"seed-{seed}")
            row[mode] = rep
        acc.append(row["act"])
        base.append(row["mean"])
        a, m = row["act"]["overall"], row["mean"]["overall"]
        print(f"{seed:>4}  {a['recall']['mean']:>10.4f}  "
              f"{m['recall']['mean']:>11.4f}  "
              f"{a['perplexity']['mean']:>8.3f}  "
              f"{m['perplexity']['mean']:>8.3f}")
    diff = compare_runs(acc, base)
    ov = diff["overall"]
    print(f"\nact wins recall in {ov['a_better_recall_fraction']:.0%} "
          f"of seeds (mean delta {ov['delta_recall']:+.4f})")
    print(f"act wins perplexity in {ov['a_lower_perplexity_fraction']:.0%} "
          f"of seeds (mean delta {ov['delta_perplexity']:+.4f})")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(diff, fh, sort_keys=True, indent=2)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
