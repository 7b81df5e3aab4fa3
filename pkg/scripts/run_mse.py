"""Run a single-estimator MSE-vs-cost experiment and print a summary table.

    python scripts/run_mse.py scripts/configs/toy_mse.ini --out mse.csv --threads 4
"""

import argparse
import math

import numpy as np

from ubmlsmc import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out", help="also write the raw CSV here")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    cfg = harness.load_config(path=args.config)
    rows = harness.run_single_estimator_experiment(cfg, args.threads)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            harness.write_csv(fh, "mse", cfg, harness.MSE_HEADER, rows)

    summary = harness.summarize_mse(rows)
    print(f"{'method':<10} {'tag':<14} {'mean cost':>12} {'MSE':>12}")
    for (method, tag), (cost, mse, _) in summary.items():
        print(f"{method:<10} {tag:<14} {cost:12.1f} {mse:12.4e}")

    by_pmax = {}
    for (method, tag), (cost, mse, _) in summary.items():
        if method == "unbiased":
            by_pmax.setdefault(tag.split(";")[0], []).append((cost, mse))
    for key, pts in by_pmax.items():
        if len(pts) > 1:
            c, m = zip(*pts)
            print(f"log-log slope {key}: {harness.loglog_slope(c, m):.3f}")

    ub = [v for k, v in summary.items() if k[0] == "unbiased"]
    if len(ub) > 1:
        b, a = np.polyfit(np.log([v[0] for v in ub]), np.log([v[1] for v in ub]), 1)
        for (method, tag), (cost, mse, _) in summary.items():
            if method == "mlsmc":
                ratio = math.exp((math.log(mse) - a) / b) / cost
                print(f"mlsmc {tag}: unbiased needs {ratio:.1f}x its cost for the same MSE")


if __name__ == "__main__":
    main()
