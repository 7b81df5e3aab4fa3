"""Piecewise-linear finite elements for -(a p')' = f on [0, 1], p(0) = p(1) = 0.

All routines are vectorized over a leading batch axis so that a whole particle
ensemble can be pushed through one assembly and one Thomas sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


class CoefficientPositivityError(ValueError):
    pass


class SingularSystemError(ArithmeticError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class MeshLevel:
    """Uniform dyadic mesh with width ``h = 2**-l``."""

    l: int

    def __post_init__(self):
        if self.l < 0:
            raise ValueError(f"mesh level must be nonnegative, got {self.l}")

    @property
    def h(self) -> float:
        return 2.0 ** (-self.l)

    @property
    def n_elements(self) -> int:
        return 2**self.l

    @property
    def n_interior(self) -> int:
        return 2**self.l - 1

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(1, self.n_interior + 1) * self.h


@dataclass(frozen=True)
class CoefficientField:
    """Diffusion coefficient ``u_bar + sum_k u_k sigma_k phi_k(x)``.

    ``phi_k`` is ``sin(k pi x)`` for odd k and ``cos(k pi x)`` for even k
    (k counted from 1). With ``sigma`` empty the field is the constant
    ``u_bar``.
    """

    u_bar: float
    sigma: tuple = ()

    @property
    def K(self) -> int:
        return len(self.sigma)

    def evaluate(self, u, x):
        """Coefficient values, shape ``u.shape[:-1] + x.shape``."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if self.K == 0:
            return np.full(u.shape[:-1] + x.shape, float(self.u_bar))
        basis = _basis_values(self.K, x)  # (K,) + x.shape
        amp = u * np.asarray(self.sigma)  # (..., K)
        return self.u_bar + np.tensordot(amp, basis, axes=([-1], [0]))

    def element_integrals(self, u, level: MeshLevel, quadrature="exact"):
        """Integral of the coefficient over each element, shape ``(..., n_elements)``."""
        u = np.asarray(u, dtype=float)
        n_el = level.n_elements
        h = level.h
        if quadrature == "gauss2":
            left = np.arange(n_el) * h
            off = 0.5 * h / np.sqrt(3.0)
            qx = np.stack([left + 0.5 * h - off, left + 0.5 * h + off])
            vals = self.evaluate(u, qx)  # (..., 2, n_el)
            return 0.5 * h * vals.sum(axis=-2)
        if quadrature != "exact":
            raise ValueError(f"unknown quadrature {quadrature!r}")
        base = np.full(u.shape[:-1] + (n_el,), self.u_bar * h)
        if self.K == 0:
            return base
        edges = np.arange(n_el + 1) * h
        prims = []
        for k in range(1, self.K + 1):
            w = k * np.pi
            if k % 2 == 1:
                prim = -np.cos(w * edges) / w
            else:
                prim = np.sin(w * edges) / w
            prims.append(np.diff(prim))
        prims = np.stack(prims)  # (K, n_el)
        return base + np.tensordot(u * np.asarray(self.sigma), prims, axes=([-1], [0]))

    def min_value_on(self, u, level: MeshLevel):
        """Minimum of the field over nodes and 2-point Gauss points of every element."""
        h = level.h
        left = np.arange(level.n_elements) * h
        off = 0.5 * h / np.sqrt(3.0)
        grid = np.concatenate([np.arange(level.n_elements + 1) * h,
                               left + 0.5 * h - off, left + 0.5 * h + off])
        return self.evaluate(u, grid).min(axis=-1)


def _basis_values(K, x):
    out = []
    for k in range(1, K + 1):
        if k % 2 == 1:
            out.append(np.sin(k * np.pi * x))
        else:
            out.append(np.cos(k * np.pi * x))
    return np.stack(out)


@dataclass(frozen=True)
class Forcing:
    """Affine right-hand side ``f(x) = c0 + c1 * x``; load vector is exact."""

    c0: float = 0.0
    c1: float = 0.0

    def load(self, level: MeshLevel, scale=None):
        x = level.nodes
        rhs = level.h * (self.c0 + self.c1 * x)
        if scale is None:
            return rhs
        return np.asarray(scale, dtype=float)[..., None] * rhs


@dataclass
class TridiagonalSystem:
    """Batched tridiagonal system; ``sub``/``sup`` have length ``n - 1``."""

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    rhs: np.ndarray

    @property
    def n(self) -> int:
        return self.diag.shape[-1]

    def matvec(self, x):
        out = self.diag * x
        out[..., :-1] += self.sup * x[..., 1:]
        out[..., 1:] += self.sub * x[..., :-1]
        return out


@dataclass
class ForwardSolution:
    level: MeshLevel
    nodal: np.ndarray  # (..., n_interior), boundary zeros implied

    def __call__(self, points):
        return interpolate(self.nodal, self.level, points)


def assemble(field_: CoefficientField, u, level: MeshLevel, forcing: Forcing,
             forcing_scale=None, quadrature="exact") -> TridiagonalSystem:
    """Stiffness matrix and load vector for hat functions on ``level``.

    ``A_ii = (k_{i-1} + k_i)``, ``A_{i,i+1} = -k_i`` with ``k_e`` the element
    integral of the coefficient divided by ``h**2``.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 0:
        u = u[None]
    if level.n_interior < 1:
        raise ValueError("mesh level 0 has no interior nodes")
    if field_.K and np.any(field_.min_value_on(u, level) <= 0.0):
        raise CoefficientPositivityError("diffusion coefficient is not positive on [0, 1]")
    if not field_.K and field_.u_bar <= 0.0:
        raise CoefficientPositivityError("diffusion coefficient is not positive on [0, 1]")
    k = field_.element_integrals(u, level, quadrature) / level.h**2
    diag = k[..., :-1] + k[..., 1:]
    off = -k[..., 1:-1]
    rhs = forcing.load(level, forcing_scale)
    rhs = np.broadcast_to(rhs, diag.shape).copy()
    return TridiagonalSystem(sub=off.copy(), diag=diag, sup=off, rhs=rhs)


def solve(system: TridiagonalSystem, level: MeshLevel | None = None) -> ForwardSolution:
    """Thomas algorithm, batched over leading axes."""
    n = system.n
    diag = np.array(system.diag, dtype=float)
    rhs = np.array(system.rhs, dtype=float)
    sub = np.broadcast_to(system.sub, diag.shape[:-1] + (max(n - 1, 0),))
    sup = np.broadcast_to(system.sup, diag.shape[:-1] + (max(n - 1, 0),))
    c = np.empty_like(diag)
    d = np.empty_like(rhs)
    piv = diag[..., 0]
    if np.any(piv == 0.0):
        raise SingularSystemError("zero pivot at row 0")
    c[..., 0] = (sup[..., 0] / piv) if n > 1 else 0.0
    d[..., 0] = rhs[..., 0] / piv
    for i in range(1, n):
        piv = diag[..., i] - sub[..., i - 1] * c[..., i - 1]
        if np.any(piv == 0.0):
            raise SingularSystemError(f"zero pivot at row {i}")
        if i < n - 1:
            c[..., i] = sup[..., i] / piv
        d[..., i] = (rhs[..., i] - sub[..., i - 1] * d[..., i - 1]) / piv
    x = d
    for i in range(n - 2, -1, -1):
        x[..., i] -= c[..., i] * x[..., i + 1]
    if level is None:
        level = MeshLevel(int(round(np.log2(n + 1))))
    return ForwardSolution(level=level, nodal=x)


@lru_cache(maxsize=256)
def _interp_weights(l, points):
    level = MeshLevel(l)
    x = np.asarray(points, dtype=float)
    if np.any(x <= 0.0) or np.any(x >= 1.0):
        raise DomainError("observation points must lie strictly inside (0, 1)")
    s = x / level.h
    j = np.minimum(np.floor(s).astype(int), level.n_elements - 1)
    w = s - j
    return j, w


def interpolate(nodal, level: MeshLevel, points):
    """Piecewise-linear interpolant of the nodal values at ``points``."""
    j, w = _interp_weights(level.l, tuple(np.atleast_1d(np.asarray(points, dtype=float)).tolist()))
    nodal = np.asarray(nodal)
    pad = [(0, 0)] * (nodal.ndim - 1) + [(1, 1)]
    full = np.pad(nodal, pad)
    return (1.0 - w) * full[..., j] + w * full[..., j + 1]


@dataclass
class ForwardModel:
    """Observation map ``u -> [p^l(x_1; u), ..., p^l(x_M; u)]``.

    With ``linear_in_u`` the coefficient is fixed and the forcing is scaled by
    the scalar latent ``u``; the unit solve is computed once per level and
    rescaled, which is exact for that problem class.
    """

    field: CoefficientField
    forcing: Forcing
    points: tuple
    linear_in_u: bool = False
    quadrature: str = "exact"
    _unit_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def observe(self, u, level: MeshLevel):
        u = np.asarray(u, dtype=float)
        if self.linear_in_u:
            unit = self._unit_cache.get(level.l)
            if unit is None:
                sys_ = assemble(self.field, np.zeros((1, 0)), level, self.forcing,
                                quadrature=self.quadrature)
                unit = solve(sys_, level)(self.points)[0]
                self._unit_cache[level.l] = unit
            return u[..., :1] * unit
        batch = u.reshape(-1, u.shape[-1])
        sys_ = assemble(self.field, batch, level, self.forcing, quadrature=self.quadrature)
        obs = solve(sys_, level)(self.points)
        return obs.reshape(u.shape[:-1] + (len(self.points),))


def observe(model: ForwardModel, u, level: MeshLevel, points=None):
    """Observations of the FEM solution at ``points`` (defaults to the model's)."""
    if points is None:
        return model.observe(u, level)
    pts = tuple(np.atleast_1d(np.asarray(points, dtype=float)).tolist())
    return ForwardModel(model.field, model.forcing, pts, model.linear_in_u,
                        model.quadrature).observe(u, level)
