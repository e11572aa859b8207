"""Hierarchical quadrilateral meshes with 1-irregular local refinement.

All cells are axis-aligned squares obtained by recursive bisection of a
uniform macro grid, so a cell is fully described by its lower-left corner
and its edge length. Vertices are never removed; refinement only appends.

Local vertex order is counter-clockwise starting at the lower-left corner::

    3 ---- 2
    |      |
    0 ---- 1

and local face ``f`` joins vertices ``f`` and ``(f + 1) % 4`` (bottom, right,
top, left).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

BOUNDARY_OUTER = 0
BOUNDARY_SLIT_RIGHT = 1
BOUNDARY_SLIT_LEFT = 2

# children k touches the parent faces listed here
CHILD_FACES = ((0, 3), (0, 1), (1, 2), (2, 3))


class MeshError(ValueError):
    """Raised for mesh configurations that cannot be realized."""


@dataclass(frozen=True)
class DomainSpec:
    """Geometry of the computational domain.

    ``unit-square`` is (0,1)^2 with a single boundary id. ``slit-square`` is
    (-1,1)^2 minus the segment {0} x (-1,0); its outer boundary carries
    ``BOUNDARY_OUTER``, the slit side facing x>0 ``BOUNDARY_SLIT_RIGHT`` and
    the side facing x<0 ``BOUNDARY_SLIT_LEFT``.
    """

    kind: str = "unit-square"

    def __post_init__(self):
        if self.kind not in ("unit-square", "slit-square"):
            raise MeshError(f"unknown domain kind {self.kind!r}")

    @property
    def bounds(self) -> tuple[float, float]:
        return (0.0, 1.0) if self.kind == "unit-square" else (-1.0, 1.0)

    @property
    def area(self) -> float:
        lo, hi = self.bounds
        return (hi - lo) ** 2

    def label_face(self, midpoint, outward_normal) -> int:
        """Boundary id of a boundary face given its midpoint and normal."""
        if self.kind == "slit-square":
            x, y = midpoint
            if abs(x) < 1e-14 and y < 0.0:
                # the normal points out of the cell, into the slit
                if outward_normal[0] < 0:
                    return BOUNDARY_SLIT_RIGHT
                return BOUNDARY_SLIT_LEFT
        return BOUNDARY_OUTER

    @property
    def boundary_ids(self) -> tuple[int, ...]:
        if self.kind == "slit-square":
            return (BOUNDARY_OUTER, BOUNDARY_SLIT_RIGHT, BOUNDARY_SLIT_LEFT)
        return (BOUNDARY_OUTER,)


def _edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


_NORMALS = ((0.0, -1.0), (1.0, 0.0), (0.0, 1.0), (-1.0, 0.0))


class Mesh:
    """Cell tree over a macro grid with hanging-node bookkeeping.

    Attributes are plain lists indexed by cell id (all cells, active or not)
    or vertex id. ``edge_cells`` maps a sorted vertex pair to the cells owning
    that exact edge; two cells sharing a key are same-level face neighbours.
    Across the slit the vertex copies differ, so no such key is shared.
    """

    def __init__(self, domain: DomainSpec):
        self.domain = domain
        self.vertices: list[tuple[float, float]] = []
        # parents of each vertex: () for macro vertices, 2 for edge
        # midpoints, 4 for cell centres (used for nodal transfer)
        self.vertex_parents: list[tuple[int, ...]] = []
        self.cell_vertices: list[tuple[int, int, int, int]] = []
        self.cell_level: list[int] = []
        self.cell_parent: list[int] = []
        self.cell_children: list[tuple[int, ...] | None] = []
        self.cell_boundary: list[tuple[int, int, int, int]] = []
        self.cell_origin: list[tuple[float, float]] = []
        self.cell_size: list[float] = []
        self.cell_center_vertex: list[int] = []
        self.active: list[bool] = []
        self.edge_cells: dict[tuple[int, int], tuple[int, ...]] = {}
        self.edge_mid: dict[tuple[int, int], int] = {}
        self._active_cache: np.ndarray | None = None

    # ------------------------------------------------------------------
    def copy(self) -> "Mesh":
        m = Mesh.__new__(Mesh)
        m.domain = self.domain
        for name in ("vertices", "vertex_parents", "cell_vertices",
                     "cell_level", "cell_parent", "cell_children",
                     "cell_boundary", "cell_origin", "cell_size",
                     "cell_center_vertex", "active"):
            setattr(m, name, list(getattr(self, name)))
        m.edge_cells = dict(self.edge_cells)
        m.edge_mid = dict(self.edge_mid)
        m._active_cache = self._active_cache
        return m

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cell_vertices)

    def active_cells(self) -> np.ndarray:
        """Sorted ids of active cells."""
        if self._active_cache is None:
            self._active_cache = np.flatnonzero(np.asarray(self.active, dtype=bool))
        return self._active_cache

    @property
    def n_active(self) -> int:
        return len(self.active_cells())

    def vertex_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float).reshape(-1, 2)

    def cell_area(self, c: int) -> float:
        return self.cell_size[c] ** 2

    # ------------------------------------------------------------------
    def _add_vertex(self, x: float, y: float, parents: tuple[int, ...] = ()) -> int:
        self.vertices.append((x, y))
        self.vertex_parents.append(parents)
        return len(self.vertices) - 1

    def _add_cell(self, verts, level, parent, boundary, origin, size) -> int:
        c = len(self.cell_vertices)
        self.cell_vertices.append(tuple(verts))
        self.cell_level.append(level)
        self.cell_parent.append(parent)
        self.cell_children.append(None)
        self.cell_boundary.append(tuple(boundary))
        self.cell_origin.append(origin)
        self.cell_size.append(size)
        self.cell_center_vertex.append(-1)
        self.active.append(True)
        for f in range(4):
            key = _edge_key(verts[f], verts[(f + 1) % 4])
            self.edge_cells[key] = self.edge_cells.get(key, ()) + (c,)
        return c

    def face_vertices(self, c: int, f: int) -> tuple[int, int]:
        v = self.cell_vertices[c]
        return v[f], v[(f + 1) % 4]

    def same_level_neighbor(self, c: int, f: int) -> int:
        """Cell sharing face ``f`` of ``c`` exactly, or -1."""
        a, b = self.face_vertices(c, f)
        for n in self.edge_cells.get(_edge_key(a, b), ()):
            if n != c:
                return n
        return -1

    def face_midpoint(self, c: int, f: int) -> tuple[float, float]:
        x0, y0 = self.cell_origin[c]
        h = self.cell_size[c]
        return ((x0 + h / 2, y0), (x0 + h, y0 + h / 2),
                (x0 + h / 2, y0 + h), (x0, y0 + h / 2))[f]

    # ------------------------------------------------------------------
    def _split(self, c: int) -> None:
        v0, v1, v2, v3 = self.cell_vertices[c]
        x0, y0 = self.cell_origin[c]
        h = self.cell_size[c]
        hh = h / 2
        mids = []
        for f, (a, b) in enumerate(((v0, v1), (v1, v2), (v2, v3), (v3, v0))):
            key = _edge_key(a, b)
            m = self.edge_mid.get(key)
            if m is None:
                xa, ya = self.vertices[a]
                xb, yb = self.vertices[b]
                m = self._add_vertex((xa + xb) / 2, (ya + yb) / 2, key)
                self.edge_mid[key] = m
            mids.append(m)
        m0, m1, m2, m3 = mids
        ctr = self._add_vertex(x0 + hh, y0 + hh, (v0, v1, v2, v3))
        self.cell_center_vertex[c] = ctr
        bnd = self.cell_boundary[c]
        lvl = self.cell_level[c] + 1
        layout = (
            ((v0, m0, ctr, m3), (x0, y0)),
            ((m0, v1, m1, ctr), (x0 + hh, y0)),
            ((ctr, m1, v2, m2), (x0 + hh, y0 + hh)),
            ((m3, ctr, m2, v3), (x0, y0 + hh)),
        )
        kids = []
        for k, (verts, origin) in enumerate(layout):
            cb = [-1, -1, -1, -1]
            for f in CHILD_FACES[k]:
                cb[f] = bnd[f]
            kids.append(self._add_cell(verts, lvl, c, cb, origin, hh))
        self.cell_children[c] = tuple(kids)
        self.active[c] = False
        self._active_cache = None

    def _refine_cell(self, c: int) -> None:
        if not self.active[c]:
            return
        p = self.cell_parent[c]
        if p >= 0:
            k = self.cell_children[p].index(c)
            for f in CHILD_FACES[k]:
                n = self.same_level_neighbor(p, f)
                if n >= 0 and self.active[n]:
                    # coarser neighbour: refine it first to stay 1-irregular
                    self._refine_cell(n)
        self._split(c)

    def refine_inplace(self, marked: Iterable[int]) -> None:
        marked = sorted(set(int(c) for c in marked))
        for c in marked:
            if c < 0 or c >= self.n_cells or not self.active[c]:
                raise MeshError(f"cell {c} is not an active cell")
        for c in marked:
            self._refine_cell(c)

    # ------------------------------------------------------------------
    def dump(self) -> str:
        """Plain-text dump: ``v x y``, ``c v0 v1 v2 v3 level``, ``b cell face id``."""
        lines = [f"v {x!r} {y!r}" for x, y in self.vertices]
        act = self.active_cells()
        for c in act:
            v = self.cell_vertices[c]
            lines.append(f"c {v[0]} {v[1]} {v[2]} {v[3]} {self.cell_level[c]}")
        for c in act:
            for f, b in enumerate(self.cell_boundary[c]):
                if b >= 0:
                    lines.append(f"b {c} {f} {b}")
        return "\n".join(lines) + "\n"


def build_initial_mesh(spec: DomainSpec, macro_subdivisions: int) -> Mesh:
    """Uniform ``n x n`` macro grid refined once (so every cell has a parent).

    For the slit square ``n`` must be even so the slit runs along grid lines;
    vertices on the slit below the tip are duplicated, one copy per side.
    """
    n = int(macro_subdivisions)
    if n < 1:
        raise MeshError("macro_subdivisions must be >= 1")
    slit = spec.kind == "slit-square"
    if slit and n % 2:
        raise MeshError("slit-square needs an even number of macro subdivisions")
    lo, hi = spec.bounds
    h = (hi - lo) / n
    mesh = Mesh(spec)
    grid = np.empty((n + 1, n + 1), dtype=int)
    for j in range(n + 1):
        for i in range(n + 1):
            grid[i, j] = mesh._add_vertex(lo + i * h, lo + j * h)
    right_copy = {}
    if slit:
        half = n // 2
        for j in range(half):
            right_copy[j] = mesh._add_vertex(0.0, lo + j * h)

    def vid(i, j, right_side):
        if slit and right_side and i == n // 2 and j in right_copy:
            return right_copy[j]
        return int(grid[i, j])

    for j in range(n):
        for i in range(n):
            right = slit and i >= n // 2
            verts = (vid(i, j, right), vid(i + 1, j, right),
                     vid(i + 1, j + 1, right), vid(i, j + 1, right))
            mesh._add_cell(verts, 0, -1, (-1, -1, -1, -1), (lo + i * h, lo + j * h), h)
    # label faces that have no neighbour
    for c in range(mesh.n_cells):
        bnd = []
        for f in range(4):
            if mesh.same_level_neighbor(c, f) >= 0:
                bnd.append(-1)
            else:
                bnd.append(spec.label_face(mesh.face_midpoint(c, f), _NORMALS[f]))
        mesh.cell_boundary[c] = tuple(bnd)
    mesh.refine_inplace(range(mesh.n_cells))
    return mesh


def refine(mesh: Mesh, marked: Iterable[int]) -> Mesh:
    """Return a refined copy; closure keeps the mesh 1-irregular."""
    out = mesh.copy()
    out.refine_inplace(marked)
    return out


def hanging_vertices(mesh: Mesh) -> list[tuple[int, tuple[int, int]]]:
    """``(vertex, (coarse cell, face))`` for every hanging vertex."""
    out = []
    for c in mesh.active_cells():
        for f in range(4):
            if mesh.cell_boundary[c][f] >= 0:
                continue
            n = mesh.same_level_neighbor(c, f)
            if n >= 0 and not mesh.active[n]:
                a, b = mesh.face_vertices(c, f)
                out.append((mesh.edge_mid[_edge_key(a, b)], (int(c), f)))
    return out


def is_one_irregular(mesh: Mesh) -> bool:
    """True if no active face pair has a level jump of 2 or more.

    A child face lying on an interior parent face with no same-level
    partner sits against a cell two or more levels coarser.
    """
    for c in mesh.active_cells():
        p = mesh.cell_parent[c]
        if p < 0:
            continue
        k = mesh.cell_children[p].index(c)
        for f in CHILD_FACES[k]:
            if mesh.cell_boundary[p][f] >= 0:
                continue
            if mesh.same_level_neighbor(p, f) < 0:
                return False
    return True
