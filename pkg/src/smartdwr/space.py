"""Continuous Q1/Q2 Lagrange spaces on a :class:`~smartdwr.mesh.Mesh`.

Degrees of freedom are keyed by mesh entities so the two degrees share
vertex dofs conceptually:

* Q1: one dof per vertex referenced by an active cell.
* Q2: vertex dofs, one dof per active face (the midpoint vertex if the face
  has been split by a finer neighbour, else a dedicated edge dof) and one
  dof per active cell centre.

Constraints (hanging nodes and Dirichlet data) are stored both as readable
lines and as an affine expansion ``u = C x + g`` from the free dofs ``x``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, MeshError, hanging_vertices, _edge_key

# reference support points, local order
Q1_NODES = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=float)
Q2_NODES = np.array([(0, 0), (1, 0), (1, 1), (0, 1),
                     (0.5, 0), (1, 0.5), (0.5, 1), (0, 0.5),
                     (0.5, 0.5)], dtype=float)

# child k of a cell occupies [ox, ox+1/2] x [oy, oy+1/2] of the parent
_CHILD_OFFSET = np.array([(0, 0), (0.5, 0), (0.5, 0.5), (0, 0.5)], dtype=float)


class SpaceError(ValueError):
    """Raised on inconsistent space construction or mismatched spaces."""


def _lagrange_1d(degree: int, t: np.ndarray):
    """Values and derivatives of the 1D Lagrange basis at nodes 0, .., 1."""
    t = np.asarray(t, dtype=float)
    if degree == 1:
        val = np.stack([1 - t, t], axis=-1)
        der = np.stack([-np.ones_like(t), np.ones_like(t)], axis=-1)
    else:
        val = np.stack([2 * (t - 0.5) * (t - 1), 4 * t * (1 - t), 2 * t * (t - 0.5)], axis=-1)
        der = np.stack([4 * t - 3, 4 - 8 * t, 4 * t - 1], axis=-1)
    return val, der


def shape_functions(degree: int, points: np.ndarray):
    """Reference shape values ``(np, nloc)`` and gradients ``(np, nloc, 2)``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    nodes = Q1_NODES if degree == 1 else Q2_NODES
    idx = np.rint(nodes * degree).astype(int)  # position in the 1D node list
    vx, dx = _lagrange_1d(degree, pts[:, 0])
    vy, dy = _lagrange_1d(degree, pts[:, 1])
    ix, iy = idx[:, 0], idx[:, 1]
    val = vx[:, ix] * vy[:, iy]
    grad = np.stack([dx[:, ix] * vy[:, iy], vx[:, ix] * dy[:, iy]], axis=-1)
    return val, grad


@lru_cache(maxsize=None)
def _patch_matrices() -> tuple[np.ndarray, ...]:
    # Q2 nodes of the parent are exactly the 3x3 vertex grid of the patch,
    # so the biquadratic through them is the parent's Q2 expansion.
    out = []
    for k in range(4):
        pts = _CHILD_OFFSET[k] + 0.5 * Q2_NODES
        val, _ = shape_functions(2, pts)
        out.append(val)
    return tuple(out)


@lru_cache(maxsize=None)
def _embed_matrix() -> np.ndarray:
    val, _ = shape_functions(1, Q2_NODES)
    return val  # (9, 4)


@dataclass
class ConstraintSet:
    """Affine constraints ``u[d] = sum(w * u[m]) + c`` on constrained dofs.

    ``lines`` keeps the resolved form, masters being free dofs only.
    ``expansion`` (n_dofs x n_free) and ``inhomogeneity`` give the same map
    in matrix form.
    """

    n_dofs: int
    lines: dict[int, tuple[tuple[tuple[int, float], ...], float]]
    free: np.ndarray
    expansion: sp.csr_matrix
    inhomogeneity: np.ndarray

    @property
    def n_free(self) -> int:
        return len(self.free)

    def is_constrained(self, dof: int) -> bool:
        return dof in self.lines

    def distribute(self, vec: np.ndarray, homogeneous: bool = False) -> np.ndarray:
        x = vec[self.free]
        out = self.expansion @ x
        if not homogeneous:
            out = out + self.inhomogeneity
        return out

    def condense(self, vec: np.ndarray) -> np.ndarray:
        """Transpose of the expansion: full-dof vector to free-dof vector."""
        return self.expansion.T @ vec


def _build_constraints(n_dofs: int, raw: Mapping[int, tuple[list, float]]) -> ConstraintSet:
    """Resolve possibly chained raw constraints into free-dof expansions."""
    resolved: dict[int, tuple[dict[int, float], float]] = {}

    def resolve(d: int, depth: int = 0):
        if d not in raw:
            return {d: 1.0}, 0.0
        if d in resolved:
            return resolved[d]
        if depth > 64:
            raise SpaceError("cyclic constraint")
        masters, const = raw[d]
        acc: dict[int, float] = {}
        c = const
        for m, w in masters:
            mm, mc = resolve(m, depth + 1)
            c += w * mc
            for k, v in mm.items():
                acc[k] = acc.get(k, 0.0) + w * v
        resolved[d] = (acc, c)
        return acc, c

    constrained = np.zeros(n_dofs, dtype=bool)
    constrained[list(raw.keys())] = True
    free = np.flatnonzero(~constrained)
    col_of = np.full(n_dofs, -1, dtype=np.int64)
    col_of[free] = np.arange(len(free))
    rows = [free]
    cols = [np.arange(len(free))]
    vals = [np.ones(len(free))]
    g = np.zeros(n_dofs)
    lines = {}
    for d in sorted(raw):
        acc, c = resolve(d)
        items = tuple(sorted((k, v) for k, v in acc.items() if v != 0.0))
        lines[d] = (items, c)
        g[d] = c
        if items:
            rows.append(np.full(len(items), d))
            cols.append(col_of[[k for k, _ in items]])
            vals.append(np.array([v for _, v in items]))
    C = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_dofs, len(free)))
    return ConstraintSet(n_dofs, lines, free, C, g)


class Space:
    """A Q1 or Q2 space on the active cells of a mesh.

    ``cells`` lists active mesh cell ids; row ``i`` of ``cell_dofs`` holds the
    global dofs of ``cells[i]`` in local order (see ``Q1_NODES`` /
    ``Q2_NODES``).
    """

    def __init__(self, mesh: Mesh, degree: int, dirichlet: Mapping[int, Callable] | None = None):
        if degree not in (1, 2):
            raise SpaceError("degree must be 1 or 2")
        dirichlet = dict(dirichlet or {})
        for bid in dirichlet:
            if bid not in mesh.domain.boundary_ids:
                raise SpaceError(f"unknown boundary id {bid}")
        self.mesh = mesh
        self.degree = degree
        self.dirichlet = dirichlet
        self.cells = mesh.active_cells().copy()
        nc = len(self.cells)
        self.cell_row = np.full(mesh.n_cells, -1, dtype=np.int64)
        self.cell_row[self.cells] = np.arange(nc)
        self.cell_h = np.array([mesh.cell_size[c] for c in self.cells])
        self.cell_origin = np.array([mesh.cell_origin[c] for c in self.cells]).reshape(-1, 2)
        cv = np.array([mesh.cell_vertices[c] for c in self.cells], dtype=np.int64).reshape(-1, 4)

        used = np.unique(cv)
        self.vertex_dof = np.full(mesh.n_vertices, -1, dtype=np.int64)
        self.vertex_dof[used] = np.arange(len(used))
        n = len(used)
        verts = mesh.vertex_array()
        support = [verts[used]]
        if degree == 1:
            self.cell_dofs = self.vertex_dof[cv]
            self.dof_vertex = used
        else:
            face_dofs = np.empty((nc, 4), dtype=np.int64)
            edge_dof: dict[tuple[int, int], int] = {}
            emid = mesh.edge_mid
            extra = []
            for i in range(nc):
                row = cv[i]
                for f in range(4):
                    a, b = int(row[f]), int(row[(f + 1) % 4])
                    key = (a, b) if a < b else (b, a)
                    m = emid.get(key)
                    if m is not None:
                        face_dofs[i, f] = self.vertex_dof[m]
                        continue
                    d = edge_dof.get(key)
                    if d is None:
                        d = n + len(extra)
                        edge_dof[key] = d
                        extra.append(key)
                    face_dofs[i, f] = d
            self.edge_dof = edge_dof
            if extra:
                ek = np.array(extra)
                support.append(0.5 * (verts[ek[:, 0]] + verts[ek[:, 1]]))
            n_edges = len(extra)
            centre = n + n_edges + np.arange(nc)
            support.append(self.cell_origin + 0.5 * self.cell_h[:, None])
            self.cell_dofs = np.concatenate(
                [self.vertex_dof[cv], face_dofs, centre[:, None]], axis=1)
            self.dof_vertex = np.concatenate([used, np.full(n_edges + nc, -1)])
        self.support_points = np.concatenate(support, axis=0)
        self.n_dofs = len(self.support_points)
        self.constraints = self._make_constraints(include_dirichlet=True)
        self.hanging_constraints = self._make_constraints(include_dirichlet=False)

    # ------------------------------------------------------------------
    def _raw_hanging(self) -> dict[int, tuple[list, float]]:
        raw = {}
        mesh = self.mesh
        for m, (c, f) in hanging_vertices(mesh):
            a, b = mesh.face_vertices(c, f)
            da, db, dm = (int(self.vertex_dof[v]) for v in (a, b, m))
            if self.degree == 1:
                raw[dm] = ([(da, 0.5), (db, 0.5)], 0.0)
            else:
                # the coarse face's quadratic trace fixes both fine edge dofs
                raw[self.edge_dof[_edge_key(a, m)]] = ([(da, 0.375), (dm, 0.75), (db, -0.125)], 0.0)
                raw[self.edge_dof[_edge_key(m, b)]] = ([(da, -0.125), (dm, 0.75), (db, 0.375)], 0.0)
        return raw

    def _raw_dirichlet(self) -> dict[int, tuple[list, float]]:
        raw = {}
        if not self.dirichlet:
            return raw
        mesh = self.mesh
        loc = ((0, 1, 4), (1, 2, 5), (2, 3, 6), (3, 0, 7))
        for i, c in enumerate(self.cells):
            for f, bid in enumerate(mesh.cell_boundary[c]):
                if bid < 0 or bid not in self.dirichlet:
                    continue
                g = self.dirichlet[bid]
                ids = loc[f] if self.degree == 2 else loc[f][:2]
                for j in ids:
                    d = int(self.cell_dofs[i, j])
                    if d not in raw:
                        x, y = self.support_points[d]
                        raw[d] = ([], float(g(x, y)))
        return raw

    def _make_constraints(self, include_dirichlet: bool) -> ConstraintSet:
        raw = self._raw_hanging()
        if include_dirichlet:
            raw.update(self._raw_dirichlet())
        return _build_constraints(self.n_dofs, raw)

    # ------------------------------------------------------------------
    @property
    def n_free(self) -> int:
        return self.constraints.n_free

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def same_mesh(self, other: "Space") -> bool:
        return self.mesh is other.mesh or (
            len(self.cells) == len(other.cells) and np.array_equal(self.cells, other.cells)
            and self.mesh.n_vertices == other.mesh.n_vertices)

    def check_same_mesh(self, other: "Space") -> None:
        if not self.same_mesh(other):
            raise SpaceError("spaces live on different meshes")

    def zero(self) -> "DiscreteFunction":
        return DiscreteFunction(self, np.zeros(self.n_dofs))

    def function(self, coeffs) -> "DiscreteFunction":
        return DiscreteFunction(self, np.asarray(coeffs, dtype=float).copy())

    def interpolate(self, g: Callable) -> "DiscreteFunction":
        """Nodal interpolant of ``g(x, y)`` (vectorized), constraints applied."""
        x, y = self.support_points[:, 0], self.support_points[:, 1]
        vals = np.broadcast_to(np.asarray(g(x, y), dtype=float), x.shape).copy()
        return DiscreteFunction(self, vals).distributed(keep_dirichlet_values=True)

    def find_vertex_dof(self, point) -> int:
        """Dof sitting on a mesh vertex at ``point``, or raise."""
        nv = int(np.count_nonzero(self.dof_vertex >= 0))
        pts = self.support_points[:nv]
        hit = np.flatnonzero(np.all(np.abs(pts - np.asarray(point, dtype=float)) < 1e-12, axis=1))
        if len(hit) == 0:
            raise SpaceError(f"point {tuple(point)} is not a mesh vertex")
        return int(hit[0])

    def locate(self, point) -> tuple[int, np.ndarray]:
        """Active cell containing ``point`` and the reference coordinates."""
        p = np.asarray(point, dtype=float)
        rel = (p - self.cell_origin) / self.cell_h[:, None]
        inside = np.all((rel >= -1e-12) & (rel <= 1 + 1e-12), axis=1)
        hits = np.flatnonzero(inside)
        if len(hits) == 0:
            raise SpaceError(f"point {tuple(p)} outside the mesh")
        i = int(hits[0])
        return int(self.cells[i]), np.clip(rel[i], 0.0, 1.0)


def build_space(mesh: Mesh, degree: int, dirichlet: Mapping[int, Callable] | None = None) -> Space:
    """Q1 or Q2 space with hanging-node and Dirichlet constraints."""
    return Space(mesh, degree, dirichlet)


@dataclass
class DiscreteFunction:
    space: Space
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.coeffs.shape != (self.space.n_dofs,):
            raise SpaceError("coefficient vector has the wrong length")

    def copy(self) -> "DiscreteFunction":
        return DiscreteFunction(self.space, self.coeffs.copy())

    def distributed(self, homogeneous: bool = False, keep_dirichlet_values: bool = False) -> "DiscreteFunction":
        """Return a copy whose constrained entries satisfy the constraints.

        With ``keep_dirichlet_values`` only hanging constraints are applied.
        """
        cs = self.space.hanging_constraints if keep_dirichlet_values else self.space.constraints
        return DiscreteFunction(self.space, cs.distribute(self.coeffs, homogeneous))

    def __add__(self, other: "DiscreteFunction") -> "DiscreteFunction":
        self._check(other)
        return DiscreteFunction(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other: "DiscreteFunction") -> "DiscreteFunction":
        self._check(other)
        return DiscreteFunction(self.space, self.coeffs - other.coeffs)

    def __mul__(self, s: float) -> "DiscreteFunction":
        return DiscreteFunction(self.space, self.coeffs * float(s))

    __rmul__ = __mul__

    def _check(self, other: "DiscreteFunction") -> None:
        if other.space is not self.space:
            raise SpaceError("functions live in different spaces")

    def cell_coeffs(self) -> np.ndarray:
        return self.coeffs[self.space.cell_dofs]


def distribute(f: DiscreteFunction, homogeneous: bool = False) -> DiscreteFunction:
    return f.distributed(homogeneous)


def evaluate(f: DiscreteFunction, cell: int, ref_point) -> tuple[float, np.ndarray]:
    """Value and physical gradient of ``f`` at ``ref_point`` of mesh cell ``cell``."""
    sp_ = f.space
    i = sp_.cell_row[cell] if 0 <= cell < len(sp_.cell_row) else -1
    if i < 0:
        raise SpaceError(f"cell {cell} is not active in this space")
    val, grad = shape_functions(sp_.degree, np.asarray(ref_point, dtype=float)[None, :])
    c = f.coeffs[sp_.cell_dofs[i]]
    return float(val[0] @ c), grad[0].T @ c / sp_.cell_h[i]


def evaluate_at(f: DiscreteFunction, point) -> tuple[float, np.ndarray]:
    cell, ref = f.space.locate(point)
    return evaluate(f, cell, ref)


def quad_fields(f: DiscreteFunction, points: np.ndarray):
    """Values ``(nc, nq)`` and physical gradients ``(nc, nq, 2)`` at reference points."""
    sp_ = f.space
    val, grad = shape_functions(sp_.degree, points)
    c = f.cell_coeffs()
    v = c @ val.T
    g = np.einsum("cj,qjd->cqd", c, grad) / sp_.cell_h[:, None, None]
    return v, g


def _cached(target: Space, name: str, source: Space, build):
    cache = target.__dict__.setdefault("_operators", {})
    hit = cache.get(name)
    if hit is not None and hit[0] is source:
        return hit[1]
    op = build(source, target)
    cache[name] = (source, op)
    return op


def _embedding_operator(q1: Space, q2: Space) -> sp.csr_matrix:
    E = _embed_matrix()
    flat = q2.cell_dofs.ravel()
    _, first = np.unique(flat, return_index=True)
    cell_idx, loc = np.divmod(first, 9)
    rows = np.repeat(flat[first], 4)
    cols = q1.cell_dofs[cell_idx].ravel()
    vals = E[loc].ravel()
    M = sp.csr_matrix((vals, (rows, cols)), shape=(q2.n_dofs, q1.n_dofs))
    M.eliminate_zeros()
    return M


def embed(f: DiscreteFunction, target: Space) -> DiscreteFunction:
    """Exact injection of a Q1 function into the Q2 space on the same mesh."""
    if f.space.degree != 1 or target.degree != 2:
        raise SpaceError("embed maps Q1 into Q2")
    f.space.check_same_mesh(target)
    op = _cached(target, "embed", f.space, _embedding_operator)
    return DiscreteFunction(target, op @ f.coeffs)


def patch_vertices(mesh: Mesh, cell: int) -> np.ndarray:
    """The 3x3 vertex grid of ``cell``'s parent in Q2 local order."""
    p = mesh.cell_parent[cell]
    if p < 0:
        raise MeshError(f"cell {cell} has no parent, mesh is not patch-covered")
    v = mesh.cell_vertices[p]
    mids = [mesh.edge_mid[_edge_key(v[f], v[(f + 1) % 4])] for f in range(4)]
    return np.array(list(v) + mids + [mesh.cell_center_vertex[p]], dtype=np.int64)


def _patch_operator(q1: Space, q2: Space) -> sp.csr_matrix:
    mesh = q2.mesh
    P = np.stack(_patch_matrices())  # (child, child node, parent node)
    nc = q2.n_cells
    kid = np.empty(nc, dtype=np.int64)
    pdofs = np.empty((nc, 9), dtype=np.int64)
    for i, c in enumerate(q2.cells):
        c = int(c)
        kid[i] = mesh.cell_children[mesh.cell_parent[c]].index(c)
        pdofs[i] = q1.vertex_dof[patch_vertices(mesh, c)]
    # a dof shared across a level jump takes the coarse cell's value: the
    # coarse quadratic trace is what the hanging constraints reproduce
    flat = q2.cell_dofs.ravel()
    level = np.repeat([mesh.cell_level[c] for c in q2.cells], 9)
    order = np.argsort(level, kind="stable")
    _, first = np.unique(flat[order], return_index=True)
    first = order[first]
    cell_idx, loc = np.divmod(first, 9)
    rows = np.repeat(flat[first], 9)
    cols = pdofs[cell_idx].ravel()
    vals = P[kid[cell_idx], loc].ravel()
    M = sp.csr_matrix((vals, (rows, cols)), shape=(q2.n_dofs, q1.n_dofs))
    M.eliminate_zeros()
    return M


def interpolate_enriched(f: DiscreteFunction, target: Space) -> DiscreteFunction:
    """Patch-wise biquadratic recovery of a Q1 function in the Q2 space.

    On each cell the result is the biquadratic through the nine Q1 nodal
    values of the parent cell's vertex grid. Constraints of ``target`` are
    distributed afterwards.
    """
    if f.space.degree != 1 or target.degree != 2:
        raise SpaceError("interpolate_enriched maps Q1 into Q2")
    f.space.check_same_mesh(target)
    op = _cached(target, "patch", f.space, _patch_operator)
    out = DiscreteFunction(target, op @ f.coeffs)
    return out.distributed()


def restrict_to_q1(f: DiscreteFunction, target: Space) -> DiscreteFunction:
    """Q1 function with the vertex values of a Q2 function."""
    if f.space.degree != 2 or target.degree != 1:
        raise SpaceError("restrict_to_q1 maps Q2 into Q1")
    f.space.check_same_mesh(target)
    q2v = f.space.vertex_dof[target.dof_vertex]
    return DiscreteFunction(target, f.coeffs[q2v].copy())
