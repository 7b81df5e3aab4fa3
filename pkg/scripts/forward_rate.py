"""Estimate the decay rate of squared forward-map differences between levels.

Prints log2 of the prior-averaged ``|G^l(u) - G^{l-1}(u)|^2`` per level and the
fitted slope, which should sit near -4 for piecewise-linear elements.
"""

import argparse

import numpy as np

from ubmlsmc import bip_model as bm


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, nargs=2, default=(3, 9))
    ap.add_argument("--draws", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = bm.general_example()
    u = np.random.default_rng(args.seed).uniform(-1.0, 1.0, size=(args.draws, spec.K))
    levels = np.arange(args.levels[0], args.levels[1] + 1)
    prev = bm.forward(spec, u, levels[0] - 1)
    out = []
    for l in levels:
        cur = bm.forward(spec, u, l)
        out.append(np.log2(np.mean(np.sum((cur - prev) ** 2, axis=-1))))
        prev = cur
        print(f"l={l:2d}  log2 E|dG|^2 = {out[-1]:8.3f}")
    print(f"slope: {np.polyfit(levels, out, 1)[0]:.3f}")


if __name__ == "__main__":
    main()
