"""Second moments of the pooled increments over a (level, depth) grid, with the fitted rates."""

import argparse
import time

import numpy as np

from ubmlsmc import bip_model as bm
from ubmlsmc import debias as db
from ubmlsmc.smc import KernelConfig
from ubmlsmc.streams import stream


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, nargs=2, default=(1, 5))
    ap.add_argument("--depth", type=int, default=4, help="largest sample-ladder index p")
    ap.add_argument("--reps", type=int, default=300)
    ap.add_argument("--theta", type=float, default=0.3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = bm.general_example()
    spec = spec.with_data(bm.generate_data(spec, [0.5, -0.3], 0.3, seed=0))
    sch = db.RandomizationSchedule(p_max=args.depth)
    kernel = KernelConfig()
    rows = []
    t0 = time.time()
    for l in range(args.levels[0], args.levels[1] + 1):
        vals = np.array([db.pooled_increment_run(spec, args.theta, l, args.depth, sch, kernel,
                                                 stream(args.seed, l, r)).values[:, 0]
                         for r in range(args.reps)])
        m2 = np.mean(vals**2, axis=0)
        rows += [(l, p, m) for p, m in enumerate(m2)]
        print(f"l={l}  log2 m2 by p: {np.array2string(np.log2(m2), precision=2)}"
              f"  ({time.time() - t0:.0f}s)", flush=True)
    A = np.array([[1.0, l, p] for l, p, _ in rows])
    coef = np.linalg.lstsq(A, np.log2([m for *_, m in rows]), rcond=None)[0]
    print(f"rate in level: {coef[1]:.3f}   rate in depth: {coef[2]:.3f}")


if __name__ == "__main__":
    main()
