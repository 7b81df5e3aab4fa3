"""Doubly randomized single-term estimator of the log-likelihood gradient.

A random level ``L ~ P_L`` removes discretization bias and a random ladder
depth ``P ~ P_P`` removes the finite-sample bias of the self-normalized SMC
increment at that level. The increments in ``p`` come from pooling
independent fixed-size MLSMC runs of sizes ``N_p - N_{p-1}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .smc import CostLedger, KernelConfig, increment_estimate, increment_sums, mlsmc_cost, run_mlsmc
from .streams import parallel_map, stream


class LevelCapError(RuntimeError):
    pass


@dataclass(frozen=True)
class RandomizationSchedule:
    """Level law ``P_L(l) ~ 2^{-pl_rate l}``, depth law ``P_P`` on ``0..p_max``,
    and sample ladder ``N_p = np_base 2^p``.

    ``pp_rule="piecewise"`` is ``2^{4-p}`` for ``p < 4`` and
    ``2^{-p} p log2(p)^2`` after; ``pp_rule="theory"`` is
    ``2^{-p} (p + 1) log2(p + 2)^2``.
    """

    pl_rate: float = 2.5
    p_max: int = 2
    np_base: int = 8
    l_max: int | None = None
    pp_rule: str = "piecewise"
    l_cap: int = 30

    def __post_init__(self):
        if self.pl_rate <= 0:
            raise ValueError("pl_rate must be positive")
        if self.p_max < 0:
            raise ValueError("p_max must be nonnegative")
        if self.np_base < 1:
            raise ValueError("np_base must be at least 1")
        if self.l_max is not None and self.l_max < 0:
            raise ValueError("l_max must be nonnegative")
        if self.pp_rule not in ("piecewise", "theory"):
            raise ValueError(f"unknown pp_rule {self.pp_rule!r}")

    @property
    def ratio(self) -> float:
        return 2.0 ** (-self.pl_rate)

    def pl(self, l):
        l = np.asarray(l)
        r = self.ratio
        if self.l_max is None:
            p = (1.0 - r) * r ** l
        else:
            norm = (1.0 - r ** (self.l_max + 1)) / (1.0 - r)
            p = np.where(l <= self.l_max, r ** l / norm, 0.0)
        return np.where(l >= 0, p, 0.0)[()]

    def pp_weights(self) -> np.ndarray:
        return self._pp_weights.copy()

    @cached_property
    def _pp_weights(self) -> np.ndarray:
        p = np.arange(self.p_max + 1, dtype=float)
        if self.pp_rule == "theory":
            w = 2.0 ** (-p) * (p + 1.0) * np.log2(p + 2.0) ** 2
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                tail = 2.0 ** (-p) * p * np.log2(np.maximum(p, 1.0)) ** 2
            w = np.where(p < 4, 2.0 ** (4.0 - p), tail)
        return w / w.sum()

    @cached_property
    def _pp_cdf(self) -> np.ndarray:
        return np.cumsum(self._pp_weights)

    @cached_property
    def _pp_tail(self) -> np.ndarray:
        tail = np.cumsum(self._pp_weights[::-1])[::-1]
        tail[0] = 1.0
        return tail

    @cached_property
    def _pl_cdf(self):
        return None if self.l_max is None else np.cumsum(self.pl(np.arange(self.l_max + 1)))

    def pp(self, p):
        w = self._pp_weights
        p = np.asarray(p)
        inside = (p >= 0) & (p <= self.p_max)
        return np.where(inside, w[np.clip(p, 0, self.p_max)], 0.0)[()]

    def pp_tail(self, p):
        """``P(P >= p)``."""
        tail = self._pp_tail
        p = np.asarray(p)
        return np.where(p <= self.p_max, tail[np.clip(p, 0, self.p_max)], 0.0)[()]

    def n_p(self, p: int) -> int:
        if p < 0:
            return 0
        return self.np_base * 2**p

    def sample_level(self, rng) -> int:
        if self.l_max is None:
            # geometric tail: P(L >= l) = r^l
            u = 1.0 - rng.random()
            l = int(math.floor(math.log(u) / math.log(self.ratio)))
            if l > self.l_cap:
                raise LevelCapError(f"sampled level {l} exceeds safety cap {self.l_cap}")
            return l
        return int(min(np.searchsorted(self._pl_cdf, rng.random(), side="right"), self.l_max))

    def sample_p(self, rng) -> int:
        return int(min(np.searchsorted(self._pp_cdf, rng.random(), side="right"), self.p_max))


def sample_level(schedule: RandomizationSchedule, rng) -> int:
    return schedule.sample_level(rng)


def sample_p(schedule: RandomizationSchedule, rng) -> int:
    return schedule.sample_p(rng)


@dataclass
class IncrementTable:
    l: int
    values: np.ndarray  # (P + 1, d_theta)
    pooled: np.ndarray  # pooled estimator after each p, (P + 1, d_theta)
    ledger: CostLedger = field(default_factory=CostLedger)


@dataclass
class GradientEstimate:
    value: np.ndarray
    replicates: int
    draws: list  # (L_i, P_i)
    cost_units: float
    singles: np.ndarray  # (M, d_theta) per-replicate single-term values
    ledger: CostLedger = field(default_factory=CostLedger)


def _concat(stats_list):
    keys = [k for k in stats_list[0] if k != "n"]
    return {k: np.concatenate([s[k] for s in stats_list]) for k in keys}


def pooled_increment_run(spec, theta, l, P, schedule: RandomizationSchedule,
                         kernel: KernelConfig, rng) -> IncrementTable:
    """Increments ``Xi^{l,p}``, ``p = 0..P``, from ``P + 1`` independent MLSMC runs.

    Run ``p`` uses ``N_p - N_{p-1}`` particles up to level ``max(l - 1, 0)``;
    the level-``l`` estimator evaluated on the pooled ensemble of runs
    ``0..p`` is differenced against the pool of runs ``0..p-1``.
    """
    if l < 0 or P < 0:
        raise ValueError("need l >= 0 and P >= 0")
    ledger = CostLedger()
    stats, pooled = [], []
    for p in range(P + 1):
        n = schedule.n_p(p) - schedule.n_p(p - 1)
        try:
            ens = run_mlsmc(spec, theta, n, l, kernel, rng, ledger)[-1]
        except RuntimeError as exc:
            raise type(exc)(f"(l={l}, p={p}) {exc}") from None
        stats.append(increment_sums(ens, spec, theta, l))
        pooled.append(increment_estimate(_concat(stats), l))
    pooled = np.asarray(pooled)
    values = np.diff(pooled, axis=0, prepend=np.zeros((1, pooled.shape[1])))
    return IncrementTable(l=l, values=values, pooled=pooled, ledger=ledger)


def coupled_sum(table: IncrementTable, schedule: RandomizationSchedule) -> np.ndarray:
    """``sum_p Xi^{l,p} / P(P >= p)``."""
    p = np.arange(table.values.shape[0])
    return (table.values / schedule.pp_tail(p)[:, None]).sum(axis=0)


def xi_l(spec, theta, l, P, schedule, kernel, rng) -> np.ndarray:
    return coupled_sum(pooled_increment_run(spec, theta, l, P, schedule, kernel, rng), schedule)


def single_term(spec, theta, schedule, kernel, rng):
    """One draw of ``Xi^L / P_L(L)``; returns ``(value, L, P, ledger)``."""
    L = schedule.sample_level(rng)
    P = schedule.sample_p(rng)
    table = pooled_increment_run(spec, theta, L, P, schedule, kernel, rng)
    return coupled_sum(table, schedule) / schedule.pl(L), L, P, table.ledger


def estimate_gradient(spec, theta, M, schedule, kernel, seed, threads=1) -> GradientEstimate:
    """Average of ``M`` i.i.d. single-term estimates.

    Replicate ``i`` draws from ``stream(seed, i)``; the reduction runs in
    replicate order, so the value is independent of ``threads``.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    results = parallel_map(
        lambda i: single_term(spec, theta, schedule, kernel, stream(seed, i)), range(M), threads)
    singles = np.array([r[0] for r in results])
    ledger = CostLedger()
    for r in results:
        ledger.merge(r[3])
    return GradientEstimate(value=singles.mean(axis=0), replicates=M,
                            draws=[(r[1], r[2]) for r in results],
                            cost_units=ledger.total_units, singles=singles, ledger=ledger)


def expected_cost(spec, schedule: RandomizationSchedule, l_terms=80) -> float:
    """Closed-form mean cost of one single-term draw under the cost model of ``run_mlsmc``."""
    ls = range(l_terms if schedule.l_max is None else schedule.l_max + 1)
    per_particle = np.array([mlsmc_cost(spec, 1, l).total_units for l in ls])
    pl = schedule.pl(np.arange(len(per_particle)))
    # a run with depth P touches N_P particles in total
    mean_n = sum(schedule.pp(p) * schedule.n_p(p) for p in range(schedule.p_max + 1))
    return float(mean_n * np.sum(pl * per_particle))


def mlsmc_allocation(L, n0=8, beta=4.0, gamma=1.0, growth=1.0, n_min=2):
    """Per-level sample sizes ``N_l = max(n_min, ceil(n0 2^{growth L} 2^{-(beta+gamma) l / 2}))``."""
    return [max(n_min, math.ceil(n0 * 2.0 ** (growth * L - 0.5 * (beta + gamma) * l)))
            for l in range(L + 1)]


def mlsmc_baseline_estimate(spec, theta, L, allocation, kernel, rng) -> GradientEstimate:
    """Biased telescoping MLSMC estimate with an independent run per level."""
    if L < 0 or len(allocation) < L + 1:
        raise ValueError("allocation must give N_l for l = 0..L")
    ledger = CostLedger()
    total = 0.0
    for l in range(L + 1):
        ens = run_mlsmc(spec, theta, int(allocation[l]), l, kernel, rng, ledger)[-1]
        total = total + increment_estimate(_concat([increment_sums(ens, spec, theta, l)]), l)
    value = np.asarray(total, dtype=float)
    return GradientEstimate(value=value, replicates=1, draws=[(L, -1)],
                            cost_units=ledger.total_units, singles=value[None, :], ledger=ledger)
