"""Command line entry point: ``ubmlsmc {estimate,mse,sgd,oracle}``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness


def _parser():
    p = argparse.ArgumentParser(prog="ubmlsmc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [("estimate", "one unbiased gradient estimate"),
                        ("mse", "single-estimator MSE vs cost experiment (CSV)"),
                        ("sgd", "SGD MSE vs cost experiment (CSV)"),
                        ("oracle", "print reference values for the configured model")]:
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="INI config file; defaults are used when omitted")
        s.add_argument("--seed", type=int, help="override experiment.master_seed")
        s.add_argument("--out", help="output path (stdout when omitted)")
        s.add_argument("--threads", type=int, default=1, help="worker threads")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if args.seed is not None:
        overrides[("experiment", "master_seed")] = args.seed
    try:
        cfg = harness.load_config(path=args.config, overrides=overrides)
        kind = cfg.get("experiment", "kind")
        if kind and kind != args.command:
            raise harness.ConfigError(f"experiment.kind: config is for {kind!r}, not {args.command!r}")
        if args.threads < 1:
            raise harness.ConfigError("--threads: must be >= 1")
        if args.command == "estimate":
            text = harness.run_estimate(cfg, args.threads)
        elif args.command == "oracle":
            text = harness.run_oracle(cfg)
        elif args.command == "mse":
            rows = harness.run_single_estimator_experiment(cfg, args.threads)
            text = harness.csv_text("mse", cfg, harness.MSE_HEADER, rows)
        else:
            rows = harness.run_sgd_experiment(cfg, args.threads)
            text = harness.csv_text("sgd", cfg, harness.SGD_HEADER, rows)
    except (harness.ConfigError, OSError, ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    out = args.out or cfg.get("experiment", "output")
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
