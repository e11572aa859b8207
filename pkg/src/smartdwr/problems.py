"""Semilinear forms ``A(u)(v) = int a(grad u) . grad v - int f v``.

Both benchmark problems share the flux family
``a(g) = (|g|^2 + eps^2)^((p-2)/2) g``; Poisson is ``p = 2``. Derivatives of
``a`` up to third order are implemented in closed form.

Scalar forms accept functions from Q1 and Q2 spaces on the same mesh and
integrate with the rule of the highest degree involved. Vector and matrix
assembly go through the kernels in :mod:`smartdwr.kernels`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import kernels
from .mesh import BOUNDARY_OUTER, BOUNDARY_SLIT_RIGHT, DomainSpec
from .quadrature import QuadratureRule, make_quadrature
from .space import DiscreteFunction, Space, quad_fields, shape_functions


def _one(x, y):
    return np.ones_like(np.asarray(x, dtype=float))


def _zero(x, y):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ProblemDef:
    """Problem data. ``dirichlet`` maps boundary ids to boundary values."""

    name: str
    domain: DomainSpec
    p: float = 2.0
    eps: float = 0.0
    source: Callable = _one
    dirichlet: dict = field(default_factory=dict)
    macro_subdivisions: int = 1

    def __post_init__(self):
        if self.p <= 1.0:
            raise ValueError("p must exceed 1")
        if self.eps < 0.0:
            raise ValueError("eps must be nonnegative")

    @property
    def is_linear(self) -> bool:
        return self.p == 2.0

    # flux and its derivatives, vectorized over leading axes of (..., 2)
    def _s(self, G):
        return np.einsum("...d,...d->...", G, G) + self.eps ** 2

    def flux(self, G):
        if self.is_linear:
            return np.array(G, dtype=float)
        m = 0.5 * (self.p - 2.0)
        return self._s(G)[..., None] ** m * G

    def flux_d1(self, G, H):
        if self.is_linear:
            return np.array(H, dtype=float)
        m = 0.5 * (self.p - 2.0)
        s = self._s(G)
        gh = _dot(G, H)
        return (s ** m)[..., None] * H + (2 * m * s ** (m - 1) * gh)[..., None] * G

    def flux_d2(self, G, H, K):
        if self.is_linear:
            return np.zeros(np.broadcast_shapes(G.shape, H.shape, K.shape))
        m = 0.5 * (self.p - 2.0)
        s = self._s(G)
        gh, gk, hk = _dot(G, H), _dot(G, K), _dot(H, K)
        c1 = 2 * m * s ** (m - 1)
        c2 = 4 * m * (m - 1) * s ** (m - 2)
        return (c1[..., None] * (gk[..., None] * H + gh[..., None] * K + hk[..., None] * G)
                + (c2 * gh * gk)[..., None] * G)

    def flux_d3(self, G, H, K, L):
        if self.is_linear:
            return np.zeros(np.broadcast_shapes(G.shape, H.shape, K.shape, L.shape))
        m = 0.5 * (self.p - 2.0)
        s = self._s(G)
        gh, gk, gl = _dot(G, H), _dot(G, K), _dot(G, L)
        hk, hl, kl = _dot(H, K), _dot(H, L), _dot(K, L)
        c1 = 2 * m * s ** (m - 1)
        c2 = 4 * m * (m - 1) * s ** (m - 2)
        c3 = 8 * m * (m - 1) * (m - 2) * s ** (m - 3)
        e = lambda a: a[..., None]  # noqa: E731
        return (e(c2 * gl) * (e(gk) * H + e(gh) * K + e(hk) * G)
                + e(c1) * (e(kl) * H + e(hl) * K + e(hk) * L)
                + e(c3 * gl * gh * gk) * G
                + e(c2) * (e(hl * gk) * G + e(gh * kl) * G + e(gh * gk) * L))


def _dot(a, b):
    return np.einsum("...d,...d->...", a, b)


def poisson(source: Callable = _one) -> ProblemDef:
    """-Laplace u = f on the unit square, u = 0 on the boundary."""
    return ProblemDef("poisson", DomainSpec("unit-square"), 2.0, 0.0, source,
                      {BOUNDARY_OUTER: _zero}, 1)


def p_laplace(p: float = 4.0, eps: float = 1e-10, source: Callable = _one,
              macro_subdivisions: int = 4) -> ProblemDef:
    """Regularized p-Laplacian on the slit square.

    Homogeneous Dirichlet data on the outer boundary and the slit side facing
    x > 0; the side facing x < 0 is a natural (Neumann) boundary.
    """
    return ProblemDef("p-laplace", DomainSpec("slit-square"), float(p), float(eps), source,
                      {BOUNDARY_OUTER: _zero, BOUNDARY_SLIT_RIGHT: _zero}, macro_subdivisions)


# ----------------------------------------------------------------------
# scalar forms

def default_rule(*spaces: Space) -> QuadratureRule:
    return make_quadrature(2 * max(s.degree for s in spaces) + 3)


def _prepare(funcs, rule: QuadratureRule | None):
    spaces = [f.space for f in funcs]
    for s in spaces[1:]:
        spaces[0].check_same_mesh(s)
    rule = rule or default_rule(*spaces)
    base = spaces[0]
    dx = rule.weights[None, :] * base.cell_h[:, None] ** 2
    fields = [quad_fields(f, rule.points) for f in funcs]
    return base, rule, dx, fields


def _physical_points(space: Space, rule: QuadratureRule):
    X = space.cell_origin[:, None, :] + space.cell_h[:, None, None] * rule.points[None, :, :]
    return X[..., 0], X[..., 1]


def residual_form(prob: ProblemDef, u: DiscreteFunction, v: DiscreteFunction,
                  rule: QuadratureRule | None = None) -> float:
    """``A(u)(v)``."""
    base, rule, dx, ((_, gu), (vv, gv)) = _prepare([u, v], rule)
    f = prob.source(*_physical_points(base, rule))
    return float(np.sum(dx * (_dot(prob.flux(gu), gv) - f * vv)))


def jacobian_form(prob, u, du, v, rule=None) -> float:
    """``A'(u)(du, v)``."""
    _, _, dx, ((_, gu), (_, gd), (_, gv)) = _prepare([u, du, v], rule)
    return float(np.sum(dx * _dot(prob.flux_d1(gu, gd), gv)))


def second_form(prob, u, du1, du2, v, rule=None) -> float:
    """``A''(u)(du1, du2, v)``."""
    _, _, dx, ((_, gu), (_, g1), (_, g2), (_, gv)) = _prepare([u, du1, du2, v], rule)
    return float(np.sum(dx * _dot(prob.flux_d2(gu, g1, g2), gv)))


def third_form(prob, u, du1, du2, du3, v, rule=None) -> float:
    """``A'''(u)(du1, du2, du3, v)``."""
    _, _, dx, fl = _prepare([u, du1, du2, du3, v], rule)
    (_, gu), (_, g1), (_, g2), (_, g3), (_, gv) = fl
    return float(np.sum(dx * _dot(prob.flux_d3(gu, g1, g2, g3), gv)))


# ----------------------------------------------------------------------
# assembly

@dataclass
class _Pattern:
    inverse: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    n: int


def _pattern(space: Space) -> _Pattern:
    pat = space.__dict__.get("_pattern")
    if pat is None:
        cd = space.cell_dofs
        nloc = cd.shape[1]
        n = space.n_dofs
        rows = np.repeat(cd, nloc, axis=1).ravel()
        cols = np.tile(cd, (1, nloc)).ravel()
        uniq, inv = np.unique(rows * n + cols, return_inverse=True)
        r, c = np.divmod(uniq, n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=n), out=indptr[1:])
        pat = _Pattern(inv.ravel(), indptr, c, n)
        space._pattern = pat
    return pat


def _reference(space: Space, rule: QuadratureRule):
    key = ("_ref", rule.order)
    cache = space.__dict__.setdefault("_refcache", {})
    if key not in cache:
        N, DN = shape_functions(space.degree, rule.points)
        cache[key] = (N, np.ascontiguousarray(DN))
    return cache[key]


def source_vector(prob: ProblemDef, space: Space, rule: QuadratureRule | None = None) -> np.ndarray:
    """``int f phi_i`` over all dofs (unconstrained)."""
    rule = rule or default_rule(space)
    N, _ = _reference(space, rule)
    f = prob.source(*_physical_points(space, rule))
    loc = (f * rule.weights[None, :] * space.cell_h[:, None] ** 2) @ N
    return np.bincount(space.cell_dofs.ravel(), loc.ravel(), minlength=space.n_dofs)


def residual_vector(prob: ProblemDef, u: DiscreteFunction, rule: QuadratureRule | None = None) -> np.ndarray:
    """``A(u)(phi_i)`` for every dof of ``u``'s space (unconstrained)."""
    space = u.space
    rule = rule or default_rule(space)
    _, DN = _reference(space, rule)
    loc = kernels.flux_residual(u.cell_coeffs(), DN, rule.weights, space.cell_h, prob.p, prob.eps)
    r = np.bincount(space.cell_dofs.ravel(), loc.ravel(), minlength=space.n_dofs)
    return r - source_vector(prob, space, rule)


def jacobian_matrix(prob: ProblemDef, u: DiscreteFunction, rule: QuadratureRule | None = None) -> sp.csr_matrix:
    """``K[i, j] = A'(u)(phi_j, phi_i)`` over all dofs (unconstrained)."""
    space = u.space
    rule = rule or default_rule(space)
    _, DN = _reference(space, rule)
    loc = kernels.flux_jacobian(u.cell_coeffs(), DN, rule.weights, space.cell_h, prob.p, prob.eps)
    pat = _pattern(space)
    data = np.bincount(pat.inverse, loc.ravel(), minlength=len(pat.indices))
    return sp.csr_matrix((data, pat.indices, pat.indptr), shape=(pat.n, pat.n))


def reduced_system(prob: ProblemDef, u: DiscreteFunction, with_matrix: bool = True,
                   rule: QuadratureRule | None = None):
    """Residual (and Jacobian) on the free dofs: ``C^T r`` and ``C^T K C``."""
    cs = u.space.constraints
    r = cs.condense(residual_vector(prob, u, rule))
    if not with_matrix:
        return r, None
    K = jacobian_matrix(prob, u, rule)
    C = cs.expansion
    Kr = (C.T @ (K @ C)).tocsr()
    Kr.sort_indices()
    return r, Kr

