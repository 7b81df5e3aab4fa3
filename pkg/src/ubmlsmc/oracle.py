"""Reference values: closed-form toy marginal likelihood and brute-force quadrature.

For the toy problem ``G(u) = g u`` with ``g_i = (x_i^2 - x_i) / 2`` and
``u ~ U[-1, 1]``, the integral over ``u`` is a truncated Gaussian integral
and reduces to a difference of error functions. Additive constants in the
log-marginal are dropped.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.optimize import brentq

from . import bip_model as bm


class QuadratureError(RuntimeError):
    pass


class LogDomainError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ToyClosedForm:
    g: np.ndarray
    y: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        if not np.linalg.norm(self.g) > 0:
            raise ValueError("observation map must be nonzero")

    @classmethod
    def from_spec(cls, spec: bm.ModelSpec) -> "ToyClosedForm":
        x = np.asarray(spec.observation_points)
        return cls(g=0.5 * (x**2 - x), y=spec.y_array, sigma=spec.theta_prior_sigma)

    @property
    def m(self) -> int:
        return len(self.y)

    @property
    def gnorm(self) -> float:
        return float(np.linalg.norm(self.g))

    @property
    def center(self) -> float:
        """Unconstrained least-squares ``u``: ``g^T y / ||g||^2``."""
        return float(self.g @ self.y) / self.gnorm**2

    @property
    def residual(self) -> float:
        """``||y||^2 - (g^T y)^2 / ||g||^2``."""
        return float(self.y @ self.y) - float(self.g @ self.y) ** 2 / self.gnorm**2


def _log_erf_diff(a, b):
    """``log(erf(a) - erf(b))`` for ``a > b`` without cancellation in the tails."""
    if a <= b:
        raise LogDomainError(f"erf bracket is not positive (a={a}, b={b})")
    if b >= 0:
        d = special.erfc(b) - special.erfc(a)
        if d <= 0:
            # both arguments far in the upper tail: use the scaled complement
            return (math.log(special.erfcx(b)) - b * b
                    + math.log1p(-special.erfcx(a) / special.erfcx(b) * math.exp(b * b - a * a)))
        return math.log(d)
    if a <= 0:
        return _log_erf_diff(-b, -a)
    return math.log(special.erf(a) - special.erf(b))


def _bracket_args(theta, cf: ToyClosedForm):
    s = math.sqrt(theta / 2.0) * cf.gnorm
    c = cf.center
    return s * (1.0 - c), s * (-1.0 - c)


def toy_log_marginal(theta, cf: ToyClosedForm) -> float:
    theta = float(theta)
    if not theta > 0:
        raise ValueError("theta must be positive")
    lt = math.log(theta)
    a, b = _bracket_args(theta, cf)
    try:
        bracket = _log_erf_diff(a, b)
    except (ValueError, OverflowError) as exc:
        raise LogDomainError(f"erf bracket underflow at theta={theta}: {exc}") from None
    return (0.5 * (cf.m - 3) * lt - 0.5 * theta * cf.residual
            - lt**2 / (2.0 * cf.sigma**2) + bracket)


def toy_grad_log_marginal(theta, cf: ToyClosedForm) -> float:
    """``d/dtheta`` of :func:`toy_log_marginal`."""
    theta = float(theta)
    if not theta > 0:
        raise ValueError("theta must be positive")
    a, b = _bracket_args(theta, cf)
    c = cf.center
    G = cf.gnorm
    log_bracket = _log_erf_diff(a, b)
    # d/dtheta erf(sqrt(theta/2) G k) = (2/sqrt(pi)) exp(-theta G^2 k^2 / 2) G k / (2 sqrt(2 theta))
    k_hi, k_lo = 1.0 - c, -1.0 - c
    scale = G / (2.0 * math.sqrt(2.0 * theta)) * 2.0 / math.sqrt(math.pi)
    t_hi = k_hi * math.exp(-a * a - log_bracket) if k_hi else 0.0
    t_lo = k_lo * math.exp(-b * b - log_bracket) if k_lo else 0.0
    return (0.5 * (cf.m - 3) / theta - 0.5 * cf.residual
            - math.log(theta) / (cf.sigma**2 * theta) + scale * (t_hi - t_lo))


def mle_toy(cf: ToyClosedForm, lo=-10.0, hi=10.0, tol=1e-10) -> float:
    """Maximizer of the toy log-marginal: golden-section search in ``log theta``,
    then a root polish of the gradient inside the final bracket."""
    f = lambda s: -toy_log_marginal(math.exp(s), cf)
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    s = 0.5 * (a + b)
    if min(s - lo, hi - s) < 1e-6:
        warnings.warn("toy MLE sits on the search boundary", RuntimeWarning)
        return math.exp(s)
    g = lambda t: toy_grad_log_marginal(math.exp(t), cf)
    width = 1e-6
    while width < 1.0:
        left, right = s - width, s + width
        if g(left) > 0 > g(right):
            return math.exp(brentq(g, left, right, xtol=1e-15, rtol=4 * np.finfo(float).eps))
        width *= 4
    return math.exp(s)


@dataclass
class QuadratureResult:
    log_z: float
    expectation: np.ndarray  # eta^l(phi^l), length d_theta
    n_nodes: int
    scale: np.ndarray = None  # eta^l(|phi^l|), the magnitude used for convergence checks

    @property
    def z(self) -> float:
        return math.exp(self.log_z)


def _tensor_rule(K, n):
    x, w = np.polynomial.legendre.leggauss(n)
    grids = np.meshgrid(*([x] * K), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wg = np.meshgrid(*([w] * K), indexing="ij")
    wts = np.prod(np.stack([g.ravel() for g in wg], axis=-1), axis=-1)
    return pts, wts


def quadrature_at(spec, theta, l, n_nodes, fn=None):
    """One tensor Gauss-Legendre evaluation over ``[-1, 1]^K`` (Lebesgue measure).

    ``fn(obs, u)`` optionally replaces ``phi^l`` as the integrand.
    """
    pts, wts = _tensor_rule(spec.K, n_nodes)
    obs = bm.forward(spec, pts, l)
    lg = bm.log_gamma_from_obs(spec, theta, obs)
    top = lg.max()
    w = wts * np.exp(lg - top)
    log_z = float(top + np.log(w.sum()))
    vals = bm.phi_from_obs(spec, theta, obs) if fn is None else np.asarray(fn(obs, pts))
    if vals.ndim == 1:
        vals = vals[:, None]
    return QuadratureResult(log_z=log_z, expectation=(w @ vals) / w.sum(), n_nodes=n_nodes,
                            scale=(w @ np.abs(vals)) / w.sum())


def quadrature_expectation(spec, theta, l, n_nodes=8, rtol=1e-10, max_nodes=2**12, fn=None):
    """Normalizing constant and ``eta^l(phi^l)``, doubling nodes until self-converged.

    The expectation is converged when its change is below ``rtol`` times
    ``eta^l(|phi^l|)``; a plain relative test could never pass where the
    expectation crosses zero.
    """
    if spec.K > 2:
        raise ValueError("tensor quadrature is limited to K <= 2")
    if n_nodes < 8:
        raise ValueError("need at least 8 nodes per dimension")
    prev = quadrature_at(spec, theta, l, n_nodes, fn)
    while True:
        n_nodes *= 2
        if n_nodes > max_nodes:
            raise QuadratureError(f"no convergence to rtol={rtol} with {max_nodes} nodes")
        cur = quadrature_at(spec, theta, l, n_nodes, fn)
        dz = abs(math.expm1(cur.log_z - prev.log_z))
        scale = np.maximum(cur.scale, 1e-300)
        de = np.max(np.abs(cur.expectation - prev.expectation) / scale)
        if dz < rtol and de < rtol:
            return cur
        prev = cur


def mle_quadrature(spec, l, lo=-6.0, hi=6.0) -> float:
    """Root in ``log theta`` of the quadrature gradient ``eta^l(phi^l)`` (K <= 2 models)."""
    g = lambda s: float(quadrature_expectation(spec, math.exp(s), l).expectation[0])
    grid = np.linspace(lo, hi, 25)
    vals = [g(s) for s in grid]
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa > 0 >= fb:
            return math.exp(brentq(g, a, b, xtol=1e-12))
    raise QuadratureError("gradient has no sign change on the search interval")
