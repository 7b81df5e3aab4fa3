"""Unbiased estimation of log-likelihood gradients for PDE-constrained Bayesian
inverse problems by doubly randomized multilevel SMC."""

from .bip_model import ModelSpec, general_example, toy_example
from .debias import GradientEstimate, RandomizationSchedule, estimate_gradient, mlsmc_baseline_estimate
from .sgd import SGDConfig, run_sgd, run_sgd_with_mlsmc
from .smc import CostLedger, KernelConfig, run_mlsmc

__all__ = [
    "CostLedger", "GradientEstimate", "KernelConfig", "ModelSpec", "RandomizationSchedule",
    "SGDConfig", "estimate_gradient", "general_example", "mlsmc_baseline_estimate",
    "run_mlsmc", "run_sgd", "run_sgd_with_mlsmc", "toy_example",
]
