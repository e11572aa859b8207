"""Dual weighted residual estimator with recovered or enriched weights.

Notation: ``ut, zt`` are the low-order primal and adjoint approximations,
``u2, z2`` their enriched counterparts (solved or recovered by patch
interpolation). Differences are formed in the enriched space after exact
embedding.

Sign convention. The exact splitting reads::

    J(u2) - J(ut) = eta_h2 + rho(ut)(zt) + R + eta_u2 + eta_z2

We store ``eta_k = -rho(ut)(zt) = A(ut)(zt)`` so that
``total = eta_h2 - eta_k + eta_R + eta_u2 + eta_z2`` reproduces the identity
above. ``eta_k`` vanishes when ``ut`` is the exact discrete solution and
``zt`` lies in its test space.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .goals import GoalDef, goal_derivative, goal_third, goal_value, point_weights
from .problems import ProblemDef, _physical_points, _prepare, default_rule, jacobian_form, residual_form
from .quadrature import gauss_01
from .space import DiscreteFunction, SpaceError, embed, quad_fields, shape_functions


@dataclass(frozen=True)
class EstimatorParts:
    eta_h2: float
    eta_k: float
    eta_R: float
    eta_u2: float
    eta_z2: float
    total: float

    @classmethod
    def from_parts(cls, eta_h2, eta_k, eta_R, eta_u2, eta_z2) -> "EstimatorParts":
        total = eta_h2 - eta_k + eta_R + eta_u2 + eta_z2
        return cls(float(eta_h2), float(eta_k), float(eta_R), float(eta_u2), float(eta_z2), float(total))

    @property
    def discretization(self) -> float:
        """``|eta_h2 - eta_k + eta_R|``, the yardstick of the enrichment tests."""
        return abs(self.eta_h2 - self.eta_k + self.eta_R)

    @property
    def stopping_sum(self) -> float:
        return self.discretization + abs(self.eta_z2) + abs(self.eta_u2)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LocalizedIndicators:
    """Signed node contributions and nonnegative cell indicators.

    ``nodes`` are Q1 dofs that are not hanging; ``cells`` are active mesh
    cell ids aligned with ``cell_values``.
    """

    nodes: np.ndarray
    node_values: np.ndarray
    cells: np.ndarray
    cell_values: np.ndarray

    @property
    def node_sum(self) -> float:
        return float(np.sum(self.node_values))


@dataclass(frozen=True)
class EffectivityReport:
    I_eff: float
    I_eff_h: float
    I_eff_R: float
    b_h: float
    gamma_partial: float
    defined: bool


@dataclass(frozen=True)
class BoundCheck:
    lower: float
    upper: float
    estimate: float
    lower_slack: float
    upper_slack: float
    b_h: float
    reliability_constant: float
    efficiency_constant: float
    I_eff: float
    I_eff_interval: tuple[float, float]
    I_eff_in_interval: bool | None
    passed: bool


def _check(*funcs: DiscreteFunction) -> None:
    for f in funcs[1:]:
        funcs[0].space.check_same_mesh(f.space)


def rho(prob: ProblemDef, u_tilde: DiscreteFunction, w: DiscreteFunction, rule=None) -> float:
    """Primal residual ``rho(u)(w) = -A(u)(w)``."""
    return -residual_form(prob, u_tilde, w, rule)


def rho_star(prob: ProblemDef, goal: GoalDef, u_tilde: DiscreteFunction, z_tilde: DiscreteFunction,
             w: DiscreteFunction, rule=None) -> float:
    """Adjoint residual ``J'(u)(w) - A'(u)(w, z)``."""
    _check(u_tilde, z_tilde, w)
    return goal_derivative(goal, u_tilde, w, rule) - jacobian_form(prob, u_tilde, w, z_tilde, rule)


def _enriched(f: DiscreteFunction, target) -> DiscreteFunction:
    if f.space is target:
        return f
    if f.space.degree == 1:
        return embed(f, target)
    raise SpaceError("function does not live in the enriched space")


def remainder(prob: ProblemDef, goal: GoalDef, u_tilde, z_tilde, u2, z2, s_points: int = 5) -> float:
    """Cubic remainder of the trapezoidal splitting.

    ``1/2 int_0^1 [J'''(ut+se)(e,e,e) - A'''(ut+se)(e,e,e, zt+s e*)
    - 3 A''(ut+se)(e,e,e*)] s(s-1) ds`` with ``e = u2 - ut``,
    ``e* = z2 - zt``, integrated with a Gauss rule of ``s_points`` points.
    """
    _check(u_tilde, z_tilde, u2, z2)
    q2 = u2.space
    uh, zh = _enriched(u_tilde, q2), _enriched(z_tilde, q2)
    e, es = u2 - uh, z2 - zh
    if prob.is_linear and not np.any(e.coeffs):
        return 0.0
    _, _, dx, ((_, gu), (_, ge), (_, gz), (_, ges)) = _prepare([uh, e, zh, es], None)
    s_nodes, s_weights = gauss_01(int(s_points))
    total = 0.0
    for s, ws in zip(s_nodes, s_weights):
        g = gu + s * ge
        a3 = prob.flux_d3(g, ge, ge, ge)
        a2 = prob.flux_d2(g, ge, ge)
        bracket = -np.sum(dx * np.einsum("cqd,cqd->cq", a3, gz + s * ges))
        bracket -= 3.0 * np.sum(dx * np.einsum("cqd,cqd->cq", a2, ges))
        bracket += goal_third(goal, uh, e, e, e)
        total += ws * s * (s - 1.0) * bracket
    return 0.5 * total


def compute_parts(prob: ProblemDef, goal: GoalDef, u_tilde: DiscreteFunction, z_tilde: DiscreteFunction,
                  u2: DiscreteFunction, z2: DiscreteFunction, s_points: int = 5) -> EstimatorParts:
    """The five estimator parts and their total."""
    _check(u_tilde, z_tilde, u2, z2)
    q2 = u2.space
    if z2.space is not q2 or q2.degree != 2:
        raise SpaceError("u2 and z2 must share the enriched space")
    uh, zh = _enriched(u_tilde, q2), _enriched(z_tilde, q2)
    rule = default_rule(q2)
    du, dz = u2 - uh, z2 - zh
    eta_h2 = 0.5 * rho(prob, u_tilde, dz, rule) + 0.5 * rho_star(prob, goal, u_tilde, z_tilde, du, rule)
    eta_k = -rho(prob, u_tilde, z_tilde, rule)
    eta_u2 = -rho(prob, u2, (z2 + zh) * 0.5, rule)
    eta_z2 = 0.5 * rho_star(prob, goal, u2, z2, du, rule)
    eta_R = remainder(prob, goal, u_tilde, z_tilde, u2, z2, s_points)
    return EstimatorParts.from_parts(eta_h2, eta_k, eta_R, eta_u2, eta_z2)


def localize_pu(prob: ProblemDef, goal: GoalDef, u_tilde: DiscreteFunction, z_tilde: DiscreteFunction,
                u2: DiscreteFunction, z2: DiscreteFunction) -> LocalizedIndicators:
    """Partition-of-unity split of ``eta_h2`` over the Q1 nodes.

    Node ``i`` receives ``eta_h2`` with both weights multiplied by the
    continuous hat function of ``i``. Hanging vertices pass their share to
    their masters, so the hats used form a partition of unity.
    """
    _check(u_tilde, z_tilde, u2, z2)
    q1, q2 = u_tilde.space, u2.space
    if q1.degree != 1 or z_tilde.space is not q1:
        raise SpaceError("u_tilde and z_tilde must share the Q1 space")
    uh, zh = embed(u_tilde, q2), embed(z_tilde, q2)
    rule = default_rule(q2)
    dx = rule.weights[None, :] * q2.cell_h[:, None] ** 2
    w1v, w1g = quad_fields(z2 - zh, rule.points)
    w2v, w2g = quad_fields(u2 - uh, rule.points)
    _, gu = quad_fields(u_tilde, rule.points)
    _, gz = quad_fields(z_tilde, rule.points)
    f = prob.source(*_physical_points(q2, rule))
    phi, dphi = shape_functions(1, rule.points)  # (nq, 4), (nq, 4, 2)
    dphi = dphi[None, :, :, :] / q2.cell_h[:, None, None, None]

    a = prob.flux(gu)
    b = prob.flux_d1(gu, gz)  # a'(grad ut) grad zt, a' symmetric
    a_w1 = np.einsum("cqd,cqd->cq", a, w1g)
    b_w2 = np.einsum("cqd,cqd->cq", b, w2g)
    a_phi = np.einsum("cqd,cqjd->cqj", a, dphi)
    b_phi = np.einsum("cqd,cqjd->cqj", b, dphi)
    part1 = -(phi[None] * a_w1[..., None] + w1v[..., None] * a_phi) + (f * w1v)[..., None] * phi[None]
    part2 = -(phi[None] * b_w2[..., None] + w2v[..., None] * b_phi)
    if goal.kind == "mean":
        part2 = part2 + w2v[..., None] * phi[None]
    local = 0.5 * np.einsum("cq,cqj->cj", dx, part1 + part2)

    full = np.bincount(q1.cell_dofs.ravel(), local.ravel(), minlength=q1.n_dofs)
    if goal.kind == "point":
        dofs, w = point_weights(goal, q1)
        np.add.at(full, dofs, 0.5 * w * goal_value(goal, u2 - uh))
    hc = q1.hanging_constraints
    nu = hc.condense(full)
    nodes = hc.free

    pos = np.full(q1.n_dofs, -1, dtype=np.int64)
    pos[nodes] = np.arange(len(nodes))
    corner = pos[q1.cell_dofs]  # (nc, 4), -1 at hanging corners
    valid = corner >= 0
    count = np.bincount(corner[valid], minlength=len(nodes)).astype(float)
    share = np.where(valid, np.abs(nu)[np.where(valid, corner, 0)] / np.maximum(count[np.where(valid, corner, 0)], 1.0), 0.0)
    return LocalizedIndicators(nodes, nu, q1.cells.copy(), share.sum(axis=1))


def effectivity(parts: EstimatorParts, J_of_utilde: float, J_reference: float | None = None,
                J_of_u2: float | None = None) -> EffectivityReport:
    nan = float("nan")
    if J_reference is None:
        return EffectivityReport(nan, nan, nan, nan, nan, False)
    err = J_reference - J_of_utilde
    err2 = abs(J_reference - J_of_u2) if J_of_u2 is not None else nan
    gamma = err2 + abs(parts.eta_z2) + abs(parts.eta_u2) + abs(parts.eta_k)
    if err == 0.0:
        return EffectivityReport(nan, nan, nan, nan, gamma, False)
    e = abs(err)
    return EffectivityReport(abs(parts.total) / e, abs(parts.eta_h2) / e, parts.discretization / e,
                             err2 / e, gamma, True)


def bound_check(parts: EstimatorParts, J_ref: float, J_of_utilde: float, J_of_u2: float,
                tol: float = 1e-12) -> BoundCheck:
    """Two-sided bounds of the estimator by the low- and high-order errors.

    ``|err| - |err2| <= |eta| <= |err| + |err2|``; when the empirical
    saturation constant ``b_h = |err2| / |err|`` is below one the
    effectivity index must lie in ``[1 - b_h, 1 + b_h]``.
    """
    err = abs(J_ref - J_of_utilde)
    err2 = abs(J_ref - J_of_u2)
    est = abs(parts.total)
    lower, upper = err - err2, err + err2
    lo_slack, up_slack = est - lower, upper - est
    passed = lo_slack >= -tol and up_slack >= -tol
    if err == 0.0:
        return BoundCheck(lower, upper, est, lo_slack, up_slack, math.inf, math.nan, math.nan,
                          math.nan, (math.nan, math.nan), None, passed)
    b = err2 / err
    ieff = est / err
    rel = 1.0 / (1.0 - b) if b < 1 else math.inf
    eff = 1.0 / (1.0 + b)
    inside = None
    if b < 1:
        inside = (1 - b) - 1e-10 <= ieff <= (1 + b) + 1e-10
        passed = passed and inside
    return BoundCheck(lower, upper, est, lo_slack, up_slack, b, rel, eff, ieff, (1 - b, 1 + b), inside, passed)
