"""Run SGD variants and print median squared error to the MLE on a geometric cost grid.

    python scripts/run_sgd.py scripts/configs/toy_sgd.ini --per-decade 2
"""

import argparse
import math

import numpy as np

from ubmlsmc import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out", help="also write the per-iteration CSV here")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--per-decade", type=int, default=2, help="checkpoints per decade of cost")
    args = ap.parse_args()

    cfg = harness.load_config(path=args.config)
    spec, traces = harness.run_sgd_traces(cfg, args.threads)
    mle = harness.reference_mle(cfg, spec)
    if args.out:
        theta_true = cfg.num("model", "theta_true")
        rows = [(name, r, float(c), float((t - mle) ** 2), float((t - theta_true) ** 2))
                for name, trs in traces.items() for r, tr in enumerate(trs)
                for t, c in zip(tr.theta, tr.cumulative_cost)]
        with open(args.out, "w", newline="") as fh:
            harness.write_csv(fh, "sgd", cfg, harness.SGD_HEADER, rows)

    top = min(tr.cumulative_cost[-1] for trs in traces.values() for tr in trs)
    n = max(1, int(args.per_decade * math.log10(top / 100.0)))
    grid = top * 10.0 ** (-np.arange(n, -1, -1) / args.per_decade)
    print(f"MLE = {mle:.6f}")
    print("cost      " + " ".join(f"{g:9.3g}" for g in grid))
    for name, trs in traces.items():
        med = [np.median(harness.error_at_cost(trs, g, lambda th: (th - mle) ** 2)) for g in grid]
        print(f"{name}\n          " + " ".join(f"{m:9.2e}" for m in med))


if __name__ == "__main__":
    main()
