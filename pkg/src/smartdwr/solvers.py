"""Sparse linear solves, damped Newton with goal-aware stopping, adjoint solves.

Matrices are scipy CSR. The direct path is SuperLU (fill-reducing column
ordering plus partial pivoting); a Jacobi-preconditioned CG is available for
SPD systems.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .goals import GoalDef, goal_vector
from .problems import ProblemDef, reduced_system
from .space import DiscreteFunction

RESIDUAL_FACTOR = 1e-12


class SolverError(RuntimeError):
    """Linear or nonlinear solver failure; ``report`` holds Newton history if any."""

    def __init__(self, message: str, report: "NewtonReport | None" = None):
        super().__init__(message)
        self.report = report


def _backward_ok(M, x, b, factor=RESIDUAL_FACTOR) -> tuple[bool, float]:
    res = np.linalg.norm(M @ x - b)
    bound = factor * (np.linalg.norm(b) + spla.norm(M) * np.linalg.norm(x))
    return bool(res <= bound), float(res)


class Factorization:
    """LU factors of a square sparse matrix with optional transpose solves.

    Jacobians of gradient-flux problems are symmetric, so diagonal pivots
    are tried first (much faster in SuperLU, same fill); if the backward
    error check fails the matrix is refactored with partial pivoting.
    """

    def __init__(self, M: sp.spmatrix, symmetric: bool = True):
        M = sp.csc_matrix(M)
        if M.shape[0] != M.shape[1]:
            raise SolverError("matrix is not square")
        self.M = M
        self._lu = None
        if M.shape[0] > 0:
            self._factor(symmetric)

    def _factor(self, symmetric: bool) -> None:
        self.symmetric = symmetric
        opts = {"SymmetricMode": True} if symmetric else {}
        try:
            self._lu = spla.splu(self.M, permc_spec="MMD_AT_PLUS_A",
                                 diag_pivot_thresh=0.0 if symmetric else 1.0, options=opts)
        except RuntimeError as exc:  # exactly singular
            if symmetric:
                self._factor(False)
                return
            raise SolverError(f"factorization failed: {exc}") from exc

    def _attempt(self, b, transpose):
        A = self.M.T if transpose else self.M
        trans = "T" if transpose else "N"
        x = self._lu.solve(b, trans=trans)
        if not np.all(np.isfinite(x)):
            return x, False, np.inf
        ok, res = _backward_ok(A, x, b)
        if not ok:
            # one step of iterative refinement
            x = x + self._lu.solve(b - A @ x, trans=trans)
            ok, res = _backward_ok(A, x, b)
        return x, ok, res

    def solve(self, b: np.ndarray, transpose: bool = False) -> np.ndarray:
        if self._lu is None:
            return np.zeros(0)
        x, ok, res = self._attempt(b, transpose)
        if not ok and self.symmetric:
            self._factor(False)
            x, ok, res = self._attempt(b, transpose)
        if not ok:
            raise SolverError(f"linear solve residual {res:.3e} above tolerance")
        return x


def linear_solve(M: sp.spmatrix, b: np.ndarray, method: str = "lu") -> np.ndarray:
    """Solve ``M x = b``; ``method`` is ``"lu"`` or ``"cg"`` (SPD only)."""
    b = np.asarray(b, dtype=float)
    if method == "lu":
        return Factorization(M).solve(b)
    if method != "cg":
        raise ValueError(f"unknown linear solver {method!r}")
    M = sp.csr_matrix(M)
    d = M.diagonal()
    if np.any(d <= 0):
        raise SolverError("CG needs a positive diagonal")
    P = sp.diags(1.0 / d)
    x, info = spla.cg(M, b, rtol=1e-14, atol=0.0, maxiter=10 * M.shape[0] + 100, M=P)
    ok, res = _backward_ok(M, x, b)
    if info != 0 or not ok:
        raise SolverError(f"CG failed (info={info}, residual {res:.3e})")
    return x


@dataclass
class StoppingRule:
    """Newton stopping test.

    Stops when the residual norm is below ``atol`` or ``rtol`` times the
    initial norm, or when the goal-weighted update ``|eta_k|`` is at most
    ``kappa`` times a supplied discretization-error estimate.
    """

    kappa: float = 1e-2
    atol: float = 1e-12
    rtol: float = 1e-11
    max_iter: int = 50
    max_halvings: int = 80
    stagnation: float = 1e-8

    def evaluate(self, residual_norm: float, initial_norm: float | None = None,
                 eta_k: float | None = None, eta_h: float | None = None) -> bool:
        if residual_norm <= self.atol:
            return True
        if initial_norm is not None and residual_norm <= self.rtol * initial_norm:
            return True
        if eta_k is not None and eta_h is not None:
            return abs(eta_k) <= self.kappa * abs(eta_h)
        return False


@dataclass
class NewtonReport:
    iterations: int = 0
    residual_norms: list[float] = field(default_factory=list)
    damping: list[float] = field(default_factory=list)
    eta_k: list[float] = field(default_factory=list)
    converged: bool = False
    reason: str = ""

    @property
    def final_residual(self) -> float:
        return self.residual_norms[-1] if self.residual_norms else float("nan")


def newton_solve(prob: ProblemDef, u0: DiscreteFunction, stop: StoppingRule | None = None,
                 goal: GoalDef | None = None, eta_h: float | None = None):
    """Damped Newton on the free dofs of ``u0``'s space.

    With a goal and an estimate ``eta_h`` the goal-weighted update
    ``eta_k = J'(d)`` of each Newton direction ``d`` drives the stopping
    test: it equals ``rho(u_k)(z_k)`` for the discrete adjoint ``z_k``
    linearized at the current iterate.
    """
    stop = stop or StoppingRule()
    space = u0.space
    cs = space.constraints
    u = u0.distributed()
    x = u.coeffs[cs.free].copy()
    jred = cs.condense(goal_vector(goal, space)) if goal is not None else None
    report = NewtonReport()

    def expand(xv):
        return DiscreteFunction(space, cs.expansion @ xv + cs.inhomogeneity)

    r, K = reduced_system(prob, u)
    norm = float(np.linalg.norm(r))
    norm0 = norm
    report.residual_norms.append(norm)
    while True:
        if stop.evaluate(norm, norm0):
            report.converged, report.reason = True, "residual"
            break
        if report.iterations >= stop.max_iter:
            report.reason = "max_iter"
            raise SolverError(f"Newton did not converge in {stop.max_iter} iterations", report)
        d = Factorization(K).solve(-r)
        if jred is not None:
            ek = float(jred @ d)
            report.eta_k.append(ek)
            if eta_h is not None and stop.evaluate(np.inf, None, ek, eta_h):
                report.converged, report.reason = True, "eta_k"
                break
        t = 1.0
        for _ in range(stop.max_halvings + 1):
            x_try = x + t * d
            u_try = expand(x_try)
            r_try, _ = reduced_system(prob, u_try, with_matrix=False)
            n_try = float(np.linalg.norm(r_try))
            if n_try < norm:
                break
            t *= 0.5
        else:
            if norm <= stop.stagnation * norm0:
                report.converged, report.reason = True, "stagnation"
                break
            report.reason = "line_search"
            raise SolverError("line search failed to reduce the residual", report)
        x, u, norm = x_try, u_try, n_try
        report.iterations += 1
        report.damping.append(t)
        report.residual_norms.append(norm)
        r, K = reduced_system(prob, u)
    return u, report


def adjoint_solve(prob: ProblemDef, goal: GoalDef, u: DiscreteFunction) -> DiscreteFunction:
    """Solve ``A'(u)(v, z) = J'(u)(v)`` for all test ``v`` in ``u``'s space.

    The adjoint problem is linear, so this is a single transposed solve;
    ``z`` satisfies the homogeneous version of the Dirichlet constraints.
    """
    space = u.space
    cs = space.constraints
    _, K = reduced_system(prob, u)
    j = cs.condense(goal_vector(goal, space))
    z = Factorization(K).solve(j, transpose=True)
    return DiscreteFunction(space, cs.expansion @ z)
