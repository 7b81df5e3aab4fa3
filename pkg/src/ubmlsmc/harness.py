"""Experiment configuration, orchestration and CSV output.

Configs are INI files (``configparser``) with sections ``model``,
``schedule``, ``kernel``, ``estimate``, ``mse``, ``sgd`` and ``experiment``.
Every key has a default listed in ``DEFAULTS``; unknown sections or keys are
rejected with their ``section.key`` path.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import math
from dataclasses import dataclass

import numpy as np

from . import bip_model as bm
from . import debias as db
from . import oracle
from . import sgd as sgd_mod
from .smc import KernelConfig
from .streams import parallel_map, stream

CSV_VERSION = "v1"

DEFAULTS = {
    "model": {
        "variant": "toy",
        "theta": "2.0",
        "m_obs": "50",
        "k": "2",
        "theta_prior_sigma": "1.0",
        "u_true": "0.5",
        "theta_true": "2.0",
        "truth_level": "12",
        "data_seed": "1",
        "min_level": "2",
    },
    "schedule": {
        "pl_rate": "2.5",
        "p_max": "2",
        "np_base": "8",
        "l_max": "",
        "pp_rule": "piecewise",
    },
    "kernel": {
        "proposal_std": "0.2",
        "n_mcmc_steps": "5",
        "n_init_mcmc": "10",
    },
    "estimate": {
        "m": "1",
    },
    "mse": {
        "p_max_values": "0, 1, 2",
        "m_values": "1, 2, 4, 8, 16",
        "mlsmc_levels": "0, 1, 2, 3",
        "mlsmc_n0": "8",
        "mlsmc_growth": "1.0",
        "reference": "auto",
        "reference_level": "10",
        "reference_runs": "50",
        "reference_n": "1024",
    },
    "sgd": {
        "xi_init": "0.0",
        "alpha1_values": "0.1",
        "step_schedule": "harmonic",
        "iterations": "200",
        "cost_budget": "",
        "m_values": "1",
        "p_max_values": "0",
        "mlsmc_levels": "",
        "sign": "ascent",
        "reference_level": "8",
    },
    "experiment": {
        "kind": "",
        "replicates": "50",
        "master_seed": "0",
        "output": "",
    },
}


class ConfigError(ValueError):
    pass


def _floats(s):
    return [float(v) for v in s.replace(";", ",").split(",") if v.strip()]


def _ints(s):
    return [int(v) for v in s.replace(";", ",").split(",") if v.strip()]


@dataclass
class ExperimentConfig:
    raw: dict

    def get(self, section, key):
        return self.raw[section][key]

    def num(self, section, key, cast=float):
        try:
            return cast(self.raw[section][key])
        except ValueError:
            raise ConfigError(f"{section}.{key}: cannot parse {self.raw[section][key]!r}") from None

    def values(self, section, key, cast=float):
        try:
            return (_ints if cast is int else _floats)(self.raw[section][key])
        except ValueError:
            raise ConfigError(f"{section}.{key}: cannot parse {self.raw[section][key]!r}") from None

    @property
    def seed(self) -> int:
        return self.num("experiment", "master_seed", int)

    @property
    def replicates(self) -> int:
        return self.num("experiment", "replicates", int)

    def canonical(self) -> str:
        lines = []
        for sec in sorted(self.raw):
            lines.append(f"[{sec}]")
            for k in sorted(self.raw[sec]):
                if (sec, k) == ("experiment", "output"):
                    continue
                lines.append(f"{k} = {self.raw[sec][k]}")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def model(self) -> bm.ModelSpec:
        variant = self.get("model", "variant")
        min_level = self.num("model", "min_level", int)
        if variant == "toy":
            base = bm.toy_example(m_obs=self.num("model", "m_obs", int),
                                  theta_prior_sigma=self.num("model", "theta_prior_sigma"),
                                  min_level=min_level)
        elif variant == "general":
            base = bm.general_example(K=self.num("model", "k", int), min_level=min_level)
        else:
            raise ConfigError(f"model.variant: expected toy or general, got {variant!r}")
        u_true = self.values("model", "u_true")
        if len(u_true) != base.K:
            raise ConfigError(f"model.u_true: expected {base.K} values, got {len(u_true)}")
        y = bm.generate_data(base, u_true, self.num("model", "theta_true"),
                             truth_level=self.num("model", "truth_level", int),
                             seed=self.num("model", "data_seed", int))
        return base.with_data(y)

    def schedule(self, p_max=None) -> db.RandomizationSchedule:
        l_max = self.get("schedule", "l_max").strip()
        return db.RandomizationSchedule(
            pl_rate=self.num("schedule", "pl_rate"),
            p_max=self.num("schedule", "p_max", int) if p_max is None else p_max,
            np_base=self.num("schedule", "np_base", int),
            l_max=int(l_max) if l_max else None,
            pp_rule=self.get("schedule", "pp_rule"))

    def kernel(self) -> KernelConfig:
        return KernelConfig(proposal_std=self.num("kernel", "proposal_std"),
                            n_mcmc_steps=self.num("kernel", "n_mcmc_steps", int),
                            n_init_mcmc=self.num("kernel", "n_init_mcmc", int))


def load_config(text=None, path=None, overrides=None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if path is not None:
        with open(path) as fh:
            text = fh.read()
    parser.read_string(text or "")
    raw = {sec: dict(vals) for sec, vals in DEFAULTS.items()}
    for sec in parser.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown section [{sec}]")
        for key, val in parser.items(sec):
            if key not in DEFAULTS[sec]:
                raise ConfigError(f"unknown key {sec}.{key}")
            raw[sec][key] = val.strip()
    for (sec, key), val in (overrides or {}).items():
        raw[sec][key] = str(val)
    cfg = ExperimentConfig(raw)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    for key in ("theta", "theta_prior_sigma", "theta_true"):
        if not cfg.num("model", key) > 0:
            raise ConfigError(f"model.{key}: must be positive")
    for key in ("m_obs", "k", "truth_level", "data_seed", "min_level"):
        cfg.num("model", key, int)
    cfg.values("model", "u_true")
    if cfg.replicates < 1:
        raise ConfigError("experiment.replicates: must be >= 1")
    if cfg.seed < 0:
        raise ConfigError("experiment.master_seed: must be >= 0")
    try:
        cfg.schedule()
        cfg.kernel()
        sgd_variants(cfg)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.get("mse", "reference") not in ("auto", "analytic", "quadrature", "mlsmc"):
        raise ConfigError("mse.reference: expected auto, analytic, quadrature or mlsmc")
    if cfg.get("experiment", "kind") not in ("", "estimate", "mse", "sgd", "oracle"):
        raise ConfigError("experiment.kind: expected estimate, mse, sgd or oracle")


def write_csv(fh, kind, cfg: ExperimentConfig, header, rows):
    fh.write(f"# ubmlsmc-csv {CSV_VERSION} kind={kind} config_sha256={cfg.digest()}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def csv_text(kind, cfg, header, rows) -> str:
    buf = io.StringIO()
    write_csv(buf, kind, cfg, header, rows)
    return buf.getvalue()


# -- truths ------------------------------------------------------------------

def reference_gradient(cfg: ExperimentConfig, spec=None, theta=None, threads=1) -> float:
    """Gradient truth: analytic (toy), quadrature or averaged MLSMC (general)."""
    spec = spec or cfg.model()
    theta = cfg.num("model", "theta") if theta is None else theta
    mode = cfg.get("mse", "reference")
    if mode == "auto":
        mode = "analytic" if spec.variant == "toy" else "quadrature"
    if mode == "analytic":
        if spec.variant != "toy":
            raise ConfigError("mse.reference: analytic truth exists only for the toy model")
        return oracle.toy_grad_log_marginal(theta, oracle.ToyClosedForm.from_spec(spec))
    level = cfg.num("mse", "reference_level", int)
    if mode == "quadrature":
        return float(oracle.quadrature_expectation(spec, theta, level).expectation[0])
    n = cfg.num("mse", "reference_n", int)
    runs = cfg.num("mse", "reference_runs", int)
    alloc = [n] * (level + 1)
    vals = parallel_map(
        lambda i: db.mlsmc_baseline_estimate(spec, theta, level, alloc, cfg.kernel(),
                                             stream(cfg.seed, 9999, i)).value[0],
        range(runs), threads)
    return float(np.mean(vals))


def reference_mle(cfg: ExperimentConfig, spec=None) -> float:
    spec = spec or cfg.model()
    if spec.variant == "toy":
        return oracle.mle_toy(oracle.ToyClosedForm.from_spec(spec))
    return oracle.mle_quadrature(spec, cfg.num("sgd", "reference_level", int))


# -- experiments ---------------------------------------------------------------

MSE_HEADER = ["method", "tag", "replicate", "cost_units", "squared_error"]
SGD_HEADER = ["variant", "replicate", "cumulative_cost", "squared_error_to_mle",
              "squared_error_to_theta_true"]


def run_single_estimator_experiment(cfg: ExperimentConfig, threads=1):
    """Rows ``(method, tag, replicate, cost_units, squared_error)``."""
    spec = cfg.model()
    theta = cfg.num("model", "theta")
    truth = reference_gradient(cfg, spec, theta, threads)
    kernel = cfg.kernel()
    R = cfg.replicates
    tasks = []
    for p_max in cfg.values("mse", "p_max_values", int):
        sch = cfg.schedule(p_max)
        for M in cfg.values("mse", "m_values", int):
            tasks.append(("unbiased", f"pmax={p_max};M={M}", ("ub", p_max, M), sch, M))
    n0 = cfg.num("mse", "mlsmc_n0", int)
    growth = cfg.num("mse", "mlsmc_growth")
    for L in cfg.values("mse", "mlsmc_levels", int):
        tasks.append(("mlsmc", f"L={L}", ("ml", L), db.mlsmc_allocation(L, n0=n0, growth=growth), L))

    def work(item):
        (method, tag, key, arg, n), r = item
        seed = stream_seed(cfg.seed, key, r)
        if method == "unbiased":
            est = db.estimate_gradient(spec, theta, n, arg, kernel, seed)
        else:
            est = db.mlsmc_baseline_estimate(spec, theta, n, arg, kernel,
                                             np.random.default_rng(seed))
        err = float(np.sum((est.value - truth) ** 2))
        return (method, tag, r, est.cost_units, err)

    items = [(t, r) for t in tasks for r in range(R)]
    return parallel_map(work, items, threads)


def stream_seed(master, key, replicate):
    """Seed sequence keyed by a variant tuple (strings hashed stably) and replicate."""
    ints = []
    for k in key:
        if isinstance(k, str):
            ints.append(int.from_bytes(hashlib.sha256(k.encode()).digest()[:4], "little"))
        else:
            ints.append(int(k))
    return np.random.SeedSequence(int(master), spawn_key=tuple(ints) + (int(replicate),))


def sgd_variants(cfg: ExperimentConfig):
    """``(name, kind, SGDConfig, extra)`` for every configured SGD variant."""
    budget = cfg.get("sgd", "cost_budget").strip()
    base = dict(xi_init=cfg.num("sgd", "xi_init"), step_schedule=cfg.get("sgd", "step_schedule"),
                iterations=cfg.num("sgd", "iterations", int), sign=cfg.get("sgd", "sign"),
                cost_budget=cfg.num("sgd", "cost_budget") if budget else None)
    out = []
    alphas = cfg.values("sgd", "alpha1_values")
    for a in alphas:
        for M in cfg.values("sgd", "m_values", int):
            for p in cfg.values("sgd", "p_max_values", int):
                c = sgd_mod.SGDConfig(alpha1=a, replicates=M, **base)
                out.append((f"unbiased;alpha1={a:g};M={M};pmax={p}", "ub", c, p))
    n0 = cfg.num("mse", "mlsmc_n0", int)
    growth = cfg.num("mse", "mlsmc_growth")
    for L in cfg.values("sgd", "mlsmc_levels", int):
        c = sgd_mod.SGDConfig(alpha1=alphas[0], replicates=1, **base)
        out.append((f"mlsmc;alpha1={alphas[0]:g};L={L}", "ml", c,
                    (L, db.mlsmc_allocation(L, n0=n0, growth=growth))))
    return out


def run_sgd_traces(cfg: ExperimentConfig, threads=1):
    """``{variant: [SGDTrace per replicate]}``."""
    spec = cfg.model()
    kernel = cfg.kernel()
    variants = sgd_variants(cfg)

    def work(item):
        (name, kind, c, extra), r = item
        seed = stream_seed(cfg.seed, (name,), r)
        if kind == "ub":
            return sgd_mod.run_sgd(spec, c, cfg.schedule(extra), kernel, seed)
        L, alloc = extra
        return sgd_mod.run_sgd_with_mlsmc(spec, c, L, alloc, kernel, seed)

    items = [(v, r) for v in variants for r in range(cfg.replicates)]
    traces = parallel_map(work, items, threads)
    out = {}
    for (v, _), tr in zip(items, traces):
        out.setdefault(v[0], []).append(tr)
    return spec, out


def run_sgd_experiment(cfg: ExperimentConfig, threads=1):
    """Rows ``(variant, replicate, cumulative_cost, squared_error_to_mle, squared_error_to_theta_true)``."""
    spec, traces = run_sgd_traces(cfg, threads)
    mle = reference_mle(cfg, spec)
    theta_true = cfg.num("model", "theta_true")
    rows = []
    for name, trs in traces.items():
        for r, tr in enumerate(trs):
            for t, c in zip(tr.theta, tr.cumulative_cost):
                rows.append((name, r, float(c), float((t - mle) ** 2), float((t - theta_true) ** 2)))
    return rows


def run_estimate(cfg: ExperimentConfig, threads=1) -> str:
    spec = cfg.model()
    theta = cfg.num("model", "theta")
    M = cfg.num("estimate", "m", int)
    est = db.estimate_gradient(spec, theta, M, cfg.schedule(), cfg.kernel(),
                               np.random.SeedSequence(cfg.seed), threads=threads)
    lines = [f"theta: {theta!r}",
             f"value: {', '.join(repr(float(v)) for v in est.value)}",
             f"replicates: {est.replicates}",
             f"cost_units: {est.cost_units!r}"]
    lines += [f"draw {i}: L={L} P={P}" for i, (L, P) in enumerate(est.draws)]
    return "\n".join(lines) + "\n"


def run_oracle(cfg: ExperimentConfig) -> str:
    spec = cfg.model()
    theta = cfg.num("model", "theta")
    lines = [f"variant: {spec.variant}", f"theta: {theta!r}",
             f"y: {', '.join(repr(float(v)) for v in spec.y_array)}"]
    if spec.variant == "toy":
        cf = oracle.ToyClosedForm.from_spec(spec)
        lines += [f"log_marginal: {oracle.toy_log_marginal(theta, cf)!r}",
                  f"grad_log_marginal: {oracle.toy_grad_log_marginal(theta, cf)!r}",
                  f"mle: {oracle.mle_toy(cf)!r}"]
    else:
        level = cfg.num("mse", "reference_level", int)
        q = oracle.quadrature_expectation(spec, theta, level)
        lines += [f"reference_level: {level}",
                  f"log_normalizer: {q.log_z!r}",
                  f"grad_log_marginal: {float(q.expectation[0])!r}"]
    return "\n".join(lines) + "\n"


# -- downstream summaries -----------------------------------------------------

def read_rows(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def summarize_mse(rows):
    """``{(method, tag): (mean cost, MSE, n)}`` from single-estimator rows."""
    acc = {}
    for r in rows:
        if isinstance(r, dict):
            key, cost, err = (r["method"], r["tag"]), float(r["cost_units"]), float(r["squared_error"])
        else:
            key, cost, err = (r[0], r[1]), float(r[3]), float(r[4])
        acc.setdefault(key, []).append((cost, err))
    return {k: (float(np.mean([c for c, _ in v])), float(np.mean([e for _, e in v])), len(v))
            for k, v in acc.items()}


def loglog_slope(x, y):
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(x, y, 1)[0])


def error_at_cost(traces, target, err_fn):
    """Per-trace error of the last iterate whose cumulative cost does not exceed ``target``."""
    out = []
    for tr in traces:
        cc = tr.cumulative_cost
        i = int(np.searchsorted(cc, target, side="right")) - 1
        out.append(err_fn(tr.theta[max(i, 0)]) if i >= 0 else math.nan)
    return np.array(out)
