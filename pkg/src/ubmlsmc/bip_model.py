"""Unnormalized posteriors over the latent coefficients and their theta-gradients.

Two variants share one code path:

``general``
    K-term trigonometric diffusion coefficient, forcing ``f(x) = 100 x``,
    Gaussian noise with precision theta. ``log gamma = (M/2) log theta -
    (theta/2) ||G(u) - y||^2``.
``toy``
    ``p'' = u`` with scalar ``u``; the density additionally carries a
    log-normal prior on theta, ``-log theta - (log theta)^2 / (2 sigma^2)``.

Levels passed to this module are schedule levels: level ``l`` is solved on
mesh level ``l + min_level``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .pde_forward import CoefficientField, Forcing, ForwardModel, MeshLevel


@dataclass(frozen=True)
class ModelSpec:
    variant: str
    K: int
    observation_points: tuple
    y: Optional[tuple] = None
    theta_prior_sigma: float = 1.0
    u_bar: float = 0.15
    sigma_k: tuple = ()
    forcing_c0: float = 0.0
    forcing_c1: float = 100.0
    min_level: int = 2
    quadrature: str = "exact"
    _forward: ForwardModel = field(default=None, repr=False, compare=False, hash=False)
    _quad_cache: dict = field(default=None, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.variant not in ("general", "toy"):
            raise ValueError(f"unknown model variant {self.variant!r}")
        if self.variant == "toy" and self.K != 1:
            raise ValueError("toy variant has K = 1")
        if self.variant == "general" and len(self.sigma_k) != self.K:
            raise ValueError("sigma_k must have K entries")
        if self.y is not None and len(self.y) != len(self.observation_points):
            raise ValueError("y and observation_points must have equal length")
        if self.theta_prior_sigma <= 0:
            raise ValueError("theta_prior_sigma must be positive")
        if self.variant == "toy":
            fwd = ForwardModel(CoefficientField(1.0), Forcing(-1.0, 0.0),
                               tuple(self.observation_points), linear_in_u=True,
                               quadrature=self.quadrature)
        else:
            fwd = ForwardModel(CoefficientField(self.u_bar, tuple(self.sigma_k)),
                               Forcing(self.forcing_c0, self.forcing_c1),
                               tuple(self.observation_points),
                               quadrature=self.quadrature)
        object.__setattr__(self, "_forward", fwd)
        object.__setattr__(self, "_quad_cache", {})

    @property
    def m_obs(self) -> int:
        return len(self.observation_points)

    @property
    def d_theta(self) -> int:
        return 1

    @property
    def y_array(self) -> np.ndarray:
        if self.y is None:
            raise ValueError("model has no observations attached")
        return np.asarray(self.y, dtype=float)

    def mesh(self, l: int) -> MeshLevel:
        return MeshLevel(l + self.min_level)

    def solve_cost(self, l: int) -> float:
        """Cost units of one forward solve at schedule level ``l`` (``1/h``)."""
        return float(2 ** (l + self.min_level))

    def with_data(self, y) -> "ModelSpec":
        return replace(self, y=tuple(float(v) for v in y), _forward=None, _quad_cache=None)


def general_example(y=None, K=2, min_level=2, quadrature="exact") -> ModelSpec:
    """Coefficient 0.15 + sum (2/5) 4^-k u_k phi_k, f = 100 x, observed at 0.25, 0.75."""
    sigma = tuple(0.4 * 4.0 ** (-k) for k in range(1, K + 1))
    return ModelSpec(variant="general", K=K, observation_points=(0.25, 0.75),
                     y=None if y is None else tuple(y), u_bar=0.15, sigma_k=sigma,
                     forcing_c0=0.0, forcing_c1=100.0, min_level=min_level,
                     quadrature=quadrature)


def toy_example(y=None, m_obs=50, theta_prior_sigma=1.0, min_level=2) -> ModelSpec:
    """``p'' = u`` on [0, 1] observed at ``x_i = i / (M + 1)``."""
    pts = tuple(i / (m_obs + 1) for i in range(1, m_obs + 1))
    return ModelSpec(variant="toy", K=1, observation_points=pts,
                     y=None if y is None else tuple(y),
                     theta_prior_sigma=theta_prior_sigma, min_level=min_level)


def _check_theta(theta):
    theta = float(theta)
    if not theta > 0.0:
        raise ValueError(f"theta must be positive, got {theta}")
    return theta


def forward(spec: ModelSpec, u, l: int):
    """``G^l(u)``, shape ``u.shape[:-1] + (M_obs,)``."""
    return spec._forward.observe(np.asarray(u, dtype=float), spec.mesh(l))


def misfit(spec: ModelSpec, obs):
    r = np.asarray(obs) - spec.y_array
    return np.einsum("...i,...i->...", r, r)


def quadratic_misfit(spec: ModelSpec, l: int):
    """Coefficients ``(a, 2b, c)`` with ``||G^l(u) - y||^2 = a u^2 - 2 b u + c``.

    Available only for the linear toy map ``G^l(u) = g^l u``; ``None`` otherwise.
    Cached per level.
    """
    if not spec._forward.linear_in_u:
        return None
    coef = spec._quad_cache.get(l)
    if coef is None:
        g = spec._forward.observe(np.ones(1), spec.mesh(l))
        y = spec.y_array
        coef = (float(g @ g), 2.0 * float(g @ y), float(y @ y))
        spec._quad_cache[l] = coef
    return coef


def misfit_fn(spec: ModelSpec, l: int):
    """Callable ``u -> ||G^l(u) - y||^2`` for a fixed level."""
    coef = quadratic_misfit(spec, l)
    if coef is None:
        return lambda u: misfit(spec, forward(spec, u, l))
    a, b2, c = coef

    def _quadratic(u):
        v = np.asarray(u, dtype=float)[..., 0]
        return (a * v - b2) * v + c

    return _quadratic


def misfit_at(spec: ModelSpec, u, l: int):
    """``||G^l(u) - y||^2`` with shape ``u.shape[:-1]``."""
    return misfit_fn(spec, l)(u)


def log_gamma_from_misfit(spec: ModelSpec, theta, mis):
    theta = _check_theta(theta)
    lt = math.log(theta)
    out = 0.5 * spec.m_obs * lt - 0.5 * theta * mis
    if spec.variant == "toy":
        out = out - lt - lt**2 / (2.0 * spec.theta_prior_sigma**2)
    return out


def phi_from_misfit(spec: ModelSpec, theta, mis):
    """Gradient integrand with a trailing ``d_theta`` axis."""
    theta = _check_theta(theta)
    out = 0.5 * spec.m_obs / theta - 0.5 * np.asarray(mis)
    if spec.variant == "toy":
        out = out - 1.0 / theta - math.log(theta) / (spec.theta_prior_sigma**2 * theta)
    return np.asarray(out)[..., None]


def log_gamma_from_obs(spec: ModelSpec, theta, obs):
    theta = _check_theta(theta)
    lt = np.log(theta)
    out = 0.5 * spec.m_obs * lt - 0.5 * theta * misfit(spec, obs)
    if spec.variant == "toy":
        out = out - lt - lt**2 / (2.0 * spec.theta_prior_sigma**2)
    return out


def phi_from_obs(spec: ModelSpec, theta, obs):
    """Gradient integrand with a trailing ``d_theta`` axis."""
    theta = _check_theta(theta)
    out = 0.5 * spec.m_obs / theta - 0.5 * misfit(spec, obs)
    if spec.variant == "toy":
        out = out - 1.0 / theta - np.log(theta) / (spec.theta_prior_sigma**2 * theta)
    return np.asarray(out)[..., None]


def log_gamma(spec: ModelSpec, theta, u, l: int):
    return log_gamma_from_obs(spec, theta, forward(spec, u, l))


def grad_log_gamma(spec: ModelSpec, theta, u, l: int):
    return phi_from_obs(spec, theta, forward(spec, u, l))


def log_level_ratio(spec: ModelSpec, theta, u, l: int):
    """``log G^l(u) = log gamma^{l+1}(u) - log gamma^l(u)``; theta-only terms cancel."""
    theta = _check_theta(theta)
    return -0.5 * theta * (misfit(spec, forward(spec, u, l + 1)) - misfit(spec, forward(spec, u, l)))


def log_prior_density_u(spec: ModelSpec, u):
    """Uniform density on ``[-1, 1]^K``; ``-inf`` outside."""
    u = np.asarray(u, dtype=float)
    inside = np.all(np.abs(u) <= 1.0, axis=-1)
    return np.where(inside, -spec.K * np.log(2.0), -np.inf)


def generate_data(spec: ModelSpec, u_true, theta_true, truth_level=12, seed=0,
                  noiseless=False):
    """Synthetic observations ``G^{truth}(u_true) + N(0, 1/theta_true)``.

    ``truth_level`` is a mesh level, not a schedule level.
    """
    u_true = np.atleast_1d(np.asarray(u_true, dtype=float))
    mesh = MeshLevel(truth_level)
    clean = spec._forward.observe(u_true, mesh)
    if noiseless:
        return clean
    theta_true = _check_theta(theta_true)
    rng = np.random.default_rng(seed)
    return clean + rng.standard_normal(clean.shape) / np.sqrt(theta_true)
