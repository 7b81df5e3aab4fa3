"""Stochastic gradient iteration on ``xi = log theta``.

The chain rule gives ``d/dxi log p(y | e^xi) = e^xi * grad``, so each step
moves ``xi`` by ``alpha_k * grad_hat * exp(xi)``. ``sign="ascent"`` climbs the
log-likelihood; ``sign="paper"`` keeps the literal minus sign of the
published update, which descends it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import debias as db
from .streams import seed_sequence, stream


class SGDDivergenceError(FloatingPointError):
    def __init__(self, iteration, xi):
        super().__init__(f"non-finite iterate at iteration {iteration} (xi={xi})")
        self.iteration = iteration


@dataclass(frozen=True)
class SGDConfig:
    xi_init: float = 0.0
    alpha1: float = 0.1
    step_schedule: str = "harmonic"
    iterations: int = 100
    replicates: int = 1
    sign: str = "ascent"
    early_stop: bool = False
    cost_budget: float | None = None  # stop once cumulative cost reaches this

    def __post_init__(self):
        if self.alpha1 < 0:
            raise ValueError("alpha1 must be nonnegative")
        if self.iterations < 0 or self.replicates < 1:
            raise ValueError("need iterations >= 0 and replicates >= 1")
        if self.step_schedule not in ("harmonic", "constant"):
            raise ValueError(f"unknown step schedule {self.step_schedule!r}")
        if self.sign not in ("ascent", "paper"):
            raise ValueError(f"unknown sign convention {self.sign!r}")
        if self.cost_budget is not None and not self.cost_budget > 0:
            raise ValueError("cost_budget must be positive")

    def alpha(self, k: int) -> float:
        return self.alpha1 / k if self.step_schedule == "harmonic" else self.alpha1


@dataclass
class SGDTrace:
    """Iterates ``xi_1 .. xi_{K+1}``; entry 0 is the starting point with zero cost."""

    xi: list = field(default_factory=list)
    step: list = field(default_factory=list)
    cost: list = field(default_factory=list)

    @property
    def theta(self) -> np.ndarray:
        return np.exp(np.asarray(self.xi))

    @property
    def cumulative_cost(self) -> np.ndarray:
        return np.cumsum(self.cost)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "theta", "cumulative_cost"])
            for k, (t, c) in enumerate(zip(self.theta, self.cumulative_cost)):
                w.writerow([k, repr(float(t)), repr(float(c))])


def _iterate(cfg: SGDConfig, gradient) -> SGDTrace:
    """Run the update with ``gradient(theta, k) -> (value, cost)``."""
    xi = float(cfg.xi_init)
    trace = SGDTrace(xi=[xi], step=[0.0], cost=[0.0])
    quiet = 0
    spent = 0.0
    for k in range(1, cfg.iterations + 1):
        theta = math.exp(xi) if xi < 700 else math.inf
        if not (math.isfinite(theta) and theta > 0):
            raise SGDDivergenceError(k, xi)
        g, cost = gradient(theta, k)
        step = cfg.alpha(k) * float(np.asarray(g).ravel()[0]) * theta
        if cfg.sign == "paper":
            step = -step
        xi = xi + step
        if not math.isfinite(xi):
            raise SGDDivergenceError(k, xi)
        trace.xi.append(xi)
        trace.step.append(step)
        trace.cost.append(float(cost))
        quiet = quiet + 1 if abs(step) < 1e-8 else 0
        if cfg.early_stop and quiet >= 50:
            break
        spent += float(cost)
        if cfg.cost_budget is not None and spent >= cfg.cost_budget:
            break
    return trace


def run_sgd(spec, cfg: SGDConfig, schedule, kernel, seed, gradient=None) -> SGDTrace:
    """SGD driven by the unbiased estimator with ``cfg.replicates`` draws per step.

    ``gradient(theta) -> value`` substitutes an exact gradient (zero cost).
    """
    if gradient is not None:
        return _iterate(cfg, lambda theta, k: (gradient(theta), 0.0))

    def grad(theta, k):
        est = db.estimate_gradient(spec, theta, cfg.replicates, schedule, kernel,
                                   seed=seed_sequence(seed, k))
        return est.value, est.cost_units

    return _iterate(cfg, grad)


def run_sgd_with_mlsmc(spec, cfg: SGDConfig, L, allocation, kernel, seed) -> SGDTrace:
    """Same iteration, stepping with the biased MLSMC estimate truncated at ``L``."""

    def grad(theta, k):
        vals, cost = [], 0.0
        for i in range(cfg.replicates):
            est = db.mlsmc_baseline_estimate(spec, theta, L, allocation, kernel, stream(seed, k, i))
            vals.append(est.value)
            cost += est.cost_units
        return np.mean(vals, axis=0), cost

    return _iterate(cfg, grad)
