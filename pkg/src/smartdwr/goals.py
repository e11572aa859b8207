"""Goal functionals: the domain integral ``int u`` and point values.

Both are linear, so the second and third derivatives vanish and the first
derivative does not depend on the linearization point. A point value is
either read from the nodal coefficient of a mesh vertex (``vertex_only``)
or evaluated inside the cell containing the point.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quadrature import QuadratureRule
from .space import DiscreteFunction, Space, SpaceError, quad_fields, shape_functions


@dataclass(frozen=True)
class GoalDef:
    kind: str  # "mean" | "point"
    point: tuple[float, float] | None = None
    reference: float | None = None
    vertex_only: bool = True

    def __post_init__(self):
        if self.kind not in ("mean", "point"):
            raise ValueError(f"unknown goal kind {self.kind!r}")
        if self.kind == "point" and self.point is None:
            raise ValueError("point goal needs an evaluation point")


def _rule(space: Space, rule: QuadratureRule | None) -> QuadratureRule:
    from .problems import default_rule
    return rule or default_rule(space)


def point_weights(goal: GoalDef, space: Space) -> tuple[np.ndarray, np.ndarray]:
    """Dofs and weights with ``u(x_P) = weights @ u.coeffs[dofs]``."""
    if goal.vertex_only:
        return np.array([space.find_vertex_dof(goal.point)]), np.ones(1)
    cell, ref = space.locate(goal.point)
    val, _ = shape_functions(space.degree, ref[None, :])
    return space.cell_dofs[space.cell_row[cell]].copy(), val[0]


def goal_value(goal: GoalDef, u: DiscreteFunction, rule: QuadratureRule | None = None) -> float:
    if goal.kind == "point":
        dofs, w = point_weights(goal, u.space)
        return float(w @ u.coeffs[dofs])
    rule = _rule(u.space, rule)
    vals, _ = quad_fields(u, rule.points)
    dx = rule.weights[None, :] * u.space.cell_h[:, None] ** 2
    return float(np.sum(dx * vals))


def goal_derivative(goal: GoalDef, u: DiscreteFunction, v: DiscreteFunction,
                    rule: QuadratureRule | None = None) -> float:
    """``J'(u)(v)``; equal to ``J(v)`` for linear goals."""
    return goal_value(goal, v, rule)


def goal_second(goal: GoalDef, u, v, w) -> float:
    return 0.0


def goal_third(goal: GoalDef, u, v, w, y) -> float:
    return 0.0


def goal_vector(goal: GoalDef, space: Space, rule: QuadratureRule | None = None) -> np.ndarray:
    """``J'(u)(phi_i)`` for every dof (unconstrained)."""
    if goal.kind == "point":
        out = np.zeros(space.n_dofs)
        dofs, w = point_weights(goal, space)
        np.add.at(out, dofs, w)
        return out
    from .problems import _reference
    rule = _rule(space, rule)
    N, _ = _reference(space, rule)
    loc = (rule.weights[None, :] * space.cell_h[:, None] ** 2) @ N
    return np.bincount(space.cell_dofs.ravel(), loc.ravel(), minlength=space.n_dofs)


def check_point_goal(goal: GoalDef, space: Space) -> None:
    if goal.kind != "point":
        return
    if goal.vertex_only:
        try:
            space.find_vertex_dof(goal.point)
        except SpaceError as exc:
            raise SpaceError(f"goal point {goal.point} is not a vertex of the mesh") from exc
    else:
        space.locate(goal.point)
