"""The adaptive loop with selective enriched solves.

Per level: solve primal and adjoint in Q1, recover enriched weights by
patch interpolation, evaluate the estimator, then decide from the size of
``eta_u2`` / ``eta_z2`` relative to ``|eta_h2 - eta_k + eta_R|`` whether an
enriched solve is worth it. After at most a few such steps the level is
localized, marked and refined.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .estimator import (EffectivityReport, EstimatorParts, LocalizedIndicators, compute_parts,
                        effectivity, localize_pu)
from .goals import GoalDef, check_point_goal, goal_value
from .mesh import Mesh, build_initial_mesh, refine
from .problems import ProblemDef, p_laplace, poisson
from .solvers import SolverError, StoppingRule, adjoint_solve, newton_solve
from .space import DiscreteFunction, Space, build_space, interpolate_enriched

log = logging.getLogger(__name__)

INTERPOLATE = "interpolate"
SOLVE_ADJOINT = "solve-adjoint"
SOLVE_PRIMAL = "solve-primal"
NONE = "none"

MODE_CONSTANTS = {"new": 0.5, "full": -1.0, "int": 1e100}

REFERENCE_VALUES = {
    ("poisson", "mean"): 0.03514425373878841,
    ("p-laplace", "mean"): 0.71755,
    ("p-laplace", "point"): 0.04501097,
}


@dataclass
class RunConfig:
    problem: str = "poisson"
    p: float = 4.0
    eps: float = 1e-10
    macro_subdivisions: int | None = None
    goal: str = "mean"
    point: tuple[float, float] = (-0.9, -0.9)
    vertex_only: bool = False
    reference: float | None = None
    mode: str = "new"
    c_u: float = 0.5
    c_z: float = 0.5
    tol: float = 1e-10
    max_levels: int = 25
    max_dofs: int | None = None
    theta: float = 0.5
    kappa: float = 1e-2
    newton_max_iter: int = 50
    s_points: int = 5
    reference_path: bool = False

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must lie in (0, 1]")
        if self.tol < 0.0:
            raise ValueError("TOL must be nonnegative")
        if self.max_levels < 1:
            raise ValueError("max_levels must be positive")
        if self.problem not in ("poisson", "p-laplace"):
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.goal not in ("mean", "point"):
            raise ValueError(f"unknown goal {self.goal!r}")
        if self.s_points < 1:
            raise ValueError("s_points must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be positive")
        if self.max_dofs is not None and self.max_dofs < 1:
            raise ValueError("max_dofs must be positive")

    @classmethod
    def for_mode(cls, mode: str, **kw) -> "RunConfig":
        c = MODE_CONSTANTS[mode]
        return cls(mode=mode, c_u=c, c_z=c, **kw)

    def problem_def(self) -> ProblemDef:
        if self.problem == "poisson":
            prob = poisson()
            n = self.macro_subdivisions or 1
        else:
            if self.goal == "point":
                # a vertex at -0.9 needs cell width 0.1; otherwise keep the coarse 4x4 start
                n = self.macro_subdivisions or (10 if self.vertex_only else 2)
            else:
                n = self.macro_subdivisions or 4
            prob = p_laplace(self.p, self.eps)
        return ProblemDef(prob.name, prob.domain, prob.p, prob.eps, prob.source, prob.dirichlet, n)

    def goal_def(self) -> GoalDef:
        ref = self.reference
        if ref is None:
            ref = REFERENCE_VALUES.get((self.problem, self.goal))
        if self.goal == "point":
            return GoalDef("point", tuple(self.point), ref, self.vertex_only)
        return GoalDef("mean", None, ref)


@dataclass
class EnrichmentState:
    u2_solved: bool = False
    z2_solved: bool = False
    # whether z2 is the enriched adjoint linearized at the current u2
    z2_current: bool = False


@dataclass
class LevelRecord:
    level: int
    dofs_primal: int
    dofs_enriched: int
    n_cells: int
    parts: EstimatorParts
    effectivity: EffectivityReport
    J_value: float
    J_enriched: float
    error: float
    z_solves_cum: int
    u_solves_cum: int
    step_trace: list[tuple[str, EstimatorParts]] = field(default_factory=list)
    newton_iterations: int = 0
    pu_sum: float = 0.0
    marked: int = 0
    stop_reason: str = ""

    @property
    def converged(self) -> bool:
        return self.stop_reason == "tol"


def decide_enrichment(parts: EstimatorParts, c_u: float, c_z: float, state: EnrichmentState) -> str:
    """Next enrichment action for the current estimator snapshot.

    The adjoint test ``|eta_z2| > c_z |eta_h2 - eta_k + eta_R|`` is only
    eligible while z2 is not an enriched solve linearized at the current
    u2; the primal test ``|eta_u2| > c_u |...|`` only until u2 is solved.
    When both fire with u2 still unsolved the primal goes first, since an
    adjoint solved now would be linearized at a u2 about to be replaced.
    """
    disc = parts.discretization
    z_fire = (not state.z2_current) and abs(parts.eta_z2) > c_z * disc
    u_fire = (not state.u2_solved) and abs(parts.eta_u2) > c_u * disc
    if u_fire:
        return SOLVE_PRIMAL
    if z_fire:
        return SOLVE_ADJOINT
    return NONE


def mark_cells(ind: LocalizedIndicators, theta: float) -> tuple[np.ndarray, bool]:
    """Bulk criterion. Returns marked cell ids and a flag for all-zero input."""
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    vals = np.asarray(ind.cell_values, dtype=float)
    cells = np.asarray(ind.cells)
    total = vals.sum()
    if not total > 0.0:
        return np.zeros(0, dtype=np.int64), True
    order = np.lexsort((cells, -vals))
    csum = np.cumsum(vals[order])
    k = int(np.searchsorted(csum, theta * csum[-1] * (1 - 1e-14), side="left")) + 1
    chosen = order[:k]
    chosen = chosen[vals[chosen] > 0.0]
    return np.sort(cells[chosen]), False


def transfer(u: DiscreteFunction, target: Space) -> DiscreteFunction:
    """Nodal transfer of a Q1 function to the Q1 space of a refined mesh."""
    old, mesh = u.space, target.mesh
    vals = np.zeros(mesh.n_vertices)
    known = old.dof_vertex
    vals[known] = u.coeffs
    have = np.zeros(mesh.n_vertices, dtype=bool)
    have[known] = True
    for v in range(mesh.n_vertices):
        if not have[v]:
            parents = mesh.vertex_parents[v]
            vals[v] = np.mean(vals[list(parents)])
            have[v] = True
    out = DiscreteFunction(target, vals[target.dof_vertex])
    return out.distributed()


@dataclass
class _LevelResult:
    record: LevelRecord
    indicators: LocalizedIndicators
    u_tilde: DiscreteFunction


def _solve_level(cfg: RunConfig, prob: ProblemDef, goal: GoalDef, mesh: Mesh, level: int,
                 u_prev: DiscreteFunction | None, eta_h_prev: float | None, counters: list[int]):
    q1 = build_space(mesh, 1, prob.dirichlet)
    q2 = build_space(mesh, 2, prob.dirichlet)
    check_point_goal(goal, q1)
    u0 = transfer(u_prev, q1) if u_prev is not None else q1.zero().distributed()
    stop = StoppingRule(kappa=cfg.kappa, max_iter=cfg.newton_max_iter)
    ut, rep = newton_solve(prob, u0, stop, goal, eta_h_prev)
    zt = adjoint_solve(prob, goal, ut)
    u2 = interpolate_enriched(ut, q2)
    z2 = interpolate_enriched(zt, q2)
    parts = compute_parts(prob, goal, ut, zt, u2, z2, cfg.s_points)
    trace = [(INTERPOLATE, parts)]
    state = EnrichmentState()
    fixed = [SOLVE_PRIMAL, SOLVE_ADJOINT] if cfg.reference_path else None
    while len(trace) < 4:
        if fixed is not None:
            if not fixed:
                break
            action = fixed.pop(0)
        else:
            action = decide_enrichment(parts, cfg.c_u, cfg.c_z, state)
        if action == NONE:
            break
        if action == SOLVE_ADJOINT:
            z2 = adjoint_solve(prob, goal, u2)
            state.z2_solved = state.z2_current = True
            counters[0] += 1
        else:
            u2, _ = newton_solve(prob, u2, StoppingRule(kappa=cfg.kappa, max_iter=cfg.newton_max_iter))
            state.u2_solved = True
            state.z2_current = False
            counters[1] += 1
        parts = compute_parts(prob, goal, ut, zt, u2, z2, cfg.s_points)
        trace.append((action, parts))

    J = goal_value(goal, ut)
    J2 = goal_value(goal, u2)
    eff = effectivity(parts, J, goal.reference, J2)
    ind = localize_pu(prob, goal, ut, zt, u2, z2)
    err = goal.reference - J if goal.reference is not None else float("nan")
    rec = LevelRecord(level, q1.n_dofs, q2.n_dofs, q1.n_cells, parts, eff, J, J2, err,
                      counters[0], counters[1], trace, rep.iterations, ind.node_sum)
    return _LevelResult(rec, ind, ut)


def run_adaptive(config: RunConfig, on_level: Callable[[LevelRecord, Mesh], None] | None = None) -> list[LevelRecord]:
    """Run the adaptive loop; the last record carries the stop reason."""
    prob = config.problem_def()
    goal = config.goal_def()
    mesh = build_initial_mesh(prob.domain, prob.macro_subdivisions)
    records: list[LevelRecord] = []
    counters = [0, 0]  # adjoint, primal enriched solves
    u_prev = None
    eta_h_prev = None
    for level in range(1, config.max_levels + 1):
        try:
            res = _solve_level(config, prob, goal, mesh, level, u_prev, eta_h_prev, counters)
        except SolverError as exc:
            raise SolverError(f"level {level}: {exc}", exc.report) from exc
        rec = res.record
        records.append(rec)
        log.info("level %d dofs %d eta %.3e err %.3e", level, rec.dofs_primal, rec.parts.total, rec.error)
        if on_level is not None:
            on_level(rec, mesh)
        if rec.parts.stopping_sum < config.tol:
            rec.stop_reason = "tol"
            break
        if level == config.max_levels:
            rec.stop_reason = "max_levels"
            break
        marked, all_zero = mark_cells(res.indicators, config.theta)
        rec.marked = len(marked)
        if all_zero:
            rec.stop_reason = "zero_indicators"
            break
        new_mesh = refine(mesh, marked)
        if config.max_dofs is not None and _count_q1_dofs(new_mesh) > config.max_dofs:
            rec.stop_reason = "max_dofs"
            break
        mesh = new_mesh
        u_prev = res.u_tilde
        eta_h_prev = rec.parts.eta_h2
    return records


def _count_q1_dofs(mesh: Mesh) -> int:
    act = mesh.active_cells()
    return len(np.unique(np.array([mesh.cell_vertices[c] for c in act])))
