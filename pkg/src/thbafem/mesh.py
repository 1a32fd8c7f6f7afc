"""Hierarchical quadtree partitions of the unit square.

A partition is stored as a frozen set of active cells ``(level, i, j)``.
All mesh logic is integer arithmetic; geometry is derived on demand.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, NamedTuple

import numpy as np

from .splines import MAX_LEVEL

log = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    """Invalid discretisation parameters (degree, base cells, level cap)."""


class LevelCapError(RuntimeError):
    """Refinement would create a cell above the configured maximum level."""


class LevelCell(NamedTuple):
    level: int
    i: int
    j: int

    def children(self) -> tuple["LevelCell", ...]:
        l, i, j = self.level + 1, 2 * self.i, 2 * self.j
        return (LevelCell(l, i, j), LevelCell(l, i + 1, j),
                LevelCell(l, i, j + 1), LevelCell(l, i + 1, j + 1))

    def ancestor(self, level: int) -> "LevelCell":
        if level > self.level:
            raise ValueError("ancestor level must not exceed the cell level")
        s = self.level - level
        return LevelCell(level, self.i >> s, self.j >> s)

    def parent(self) -> "LevelCell":
        return self.ancestor(self.level - 1)

    def side(self, base_cells: int) -> float:
        return 1.0 / (base_cells * 2**self.level)

    def diameter(self, base_cells: int) -> float:
        """h_tau, the diagonal of the square cell."""
        return np.sqrt(2.0) * self.side(base_cells)

    def bounds(self, base_cells: int) -> tuple[float, float, float, float]:
        h = self.side(base_cells)
        return self.i * h, (self.i + 1) * h, self.j * h, (self.j + 1) * h


class _LevelGrid:
    """Boolean occupancy of level-l cells with O(1) box counting."""

    def __init__(self, ij: np.ndarray, n: int):
        self.n = n
        if len(ij) == 0:
            self.i0 = self.j0 = 0
            self.sat = np.zeros((1, 1), dtype=np.int64)
            self.shape = (0, 0)
            return
        self.i0, self.j0 = ij.min(axis=0)
        i1, j1 = ij.max(axis=0)
        self.shape = (i1 - self.i0 + 1, j1 - self.j0 + 1)
        g = np.zeros(self.shape, dtype=np.int64)
        g[ij[:, 0] - self.i0, ij[:, 1] - self.j0] = 1
        sat = np.zeros((self.shape[0] + 1, self.shape[1] + 1), dtype=np.int64)
        sat[1:, 1:] = g.cumsum(0).cumsum(1)
        self.sat = sat

    def count(self, ilo, ihi, jlo, jhi):
        """Number of occupied cells in the inclusive index box (vectorized)."""
        ilo = np.asarray(ilo) - self.i0
        ihi = np.asarray(ihi) - self.i0 + 1
        jlo = np.asarray(jlo) - self.j0
        jhi = np.asarray(jhi) - self.j0 + 1
        a = np.clip(ilo, 0, self.shape[0])
        b = np.clip(ihi, 0, self.shape[0])
        c = np.clip(jlo, 0, self.shape[1])
        d = np.clip(jhi, 0, self.shape[1])
        b = np.maximum(a, b)
        d = np.maximum(c, d)
        s = self.sat
        return s[b, d] - s[a, d] - s[b, c] + s[a, c]


@dataclass(frozen=True)
class HierPartition:
    """Admissible-by-construction hierarchical mesh (validated on creation)."""

    degree: int
    base_cells: int
    cells: frozenset
    max_level: int = MAX_LEVEL

    def __post_init__(self):
        cells = frozenset(LevelCell(*map(int, c)) for c in self.cells)
        object.__setattr__(self, "cells", cells)
        problems = structural_violations(cells, self.base_cells)
        if problems:
            raise ValueError("invalid partition: " + "; ".join(problems[:5]))
        if self.nlevels - 1 > self.max_level:
            raise LevelCapError("partition exceeds the level cap")

    def __len__(self):
        return len(self.cells)

    def __contains__(self, c):
        return c in self.cells

    def n(self, level: int) -> int:
        """Number of cells per direction at ``level``."""
        return self.base_cells * 2**level

    @cached_property
    def nlevels(self) -> int:
        return max(c.level for c in self.cells) + 1

    @cached_property
    def sorted_cells(self) -> list[LevelCell]:
        return sorted(self.cells)

    @cached_property
    def active(self) -> list[set]:
        out = [set() for _ in range(self.nlevels)]
        for c in self.cells:
            out[c.level].add((c.i, c.j))
        return out

    @cached_property
    def refined(self) -> list[set]:
        """R_l: level-l cells that are strict ancestors of active cells."""
        out = [set() for _ in range(self.nlevels)]
        for m in range(1, self.nlevels):
            if not self.active[m]:
                continue
            a = np.array(sorted(self.active[m]))
            for l in range(m):
                s = m - l
                out[l].update(map(tuple, np.unique(a >> s, axis=0).tolist()))
        return out

    @cached_property
    def _omega_grid(self) -> list[_LevelGrid]:
        grids = []
        for l in range(self.nlevels):
            ij = np.array(sorted(self.active[l] | self.refined[l]), dtype=np.int64).reshape(-1, 2)
            grids.append(_LevelGrid(ij, self.n(l)))
        return grids

    @cached_property
    def _refined_grid(self) -> list[_LevelGrid]:
        return [_LevelGrid(np.array(sorted(self.refined[l]), dtype=np.int64).reshape(-1, 2), self.n(l))
                for l in range(self.nlevels)]

    @cached_property
    def _active_grid(self) -> list[_LevelGrid]:
        return [_LevelGrid(np.array(sorted(self.active[l]), dtype=np.int64).reshape(-1, 2), self.n(l))
                for l in range(self.nlevels)]

    def in_omega(self, level: int, i: int, j: int) -> bool:
        """Is the level-``level`` cell (i, j) contained in Omega^level?"""
        if level >= self.nlevels:
            return False
        return (i, j) in self.active[level] or (i, j) in self.refined[level]

    def box_count(self, which: str, level: int, ilo, ihi, jlo, jhi):
        """Count cells of a level set inside inclusive index boxes.

        ``which`` is ``"omega"``, ``"refined"`` or ``"active"``.
        """
        if level >= self.nlevels:
            return np.zeros(np.broadcast(np.asarray(ilo), np.asarray(jlo)).shape, dtype=np.int64)
        grid = {"omega": self._omega_grid, "refined": self._refined_grid,
                "active": self._active_grid}[which][level]
        return grid.count(ilo, ihi, jlo, jhi)

    def locate(self, x: float, y: float) -> LevelCell:
        """Active cell containing the point (right-continuous, closed at 1)."""
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise ValueError(f"point ({x}, {y}) outside the unit square")
        for l in range(self.nlevels):
            n = self.n(l)
            i = min(int(np.floor(x * n)), n - 1)
            j = min(int(np.floor(y * n)), n - 1)
            if (i, j) in self.active[l]:
                return LevelCell(l, i, j)
        raise AssertionError("point not covered")  # pragma: no cover

    def cell_counts(self) -> list[int]:
        return [len(a) for a in self.active]

    def area(self) -> float:
        return sum(c.side(self.base_cells) ** 2 for c in self.cells)

    def with_cells(self, cells: Iterable) -> "HierPartition":
        return HierPartition(self.degree, self.base_cells, frozenset(cells), self.max_level)

    # ---- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {"degree": self.degree, "base_cells": self.base_cells,
                "cells": [list(c) for c in self.sorted_cells]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict, max_level: int = MAX_LEVEL) -> "HierPartition":
        try:
            return cls(int(d["degree"]), int(d["base_cells"]),
                       frozenset(tuple(c) for c in d["cells"]), max_level)
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed mesh document: {exc}") from exc

    @classmethod
    def from_json(cls, text: str, max_level: int = MAX_LEVEL) -> "HierPartition":
        return cls.from_dict(json.loads(text), max_level)


def structural_violations(cells, base_cells: int) -> list[str]:
    """Disjointness, range and coverage problems of a raw cell collection."""
    out = []
    cells = set(cells)
    if not cells:
        return ["no cells"]
    for c in sorted(cells):
        n = base_cells * 2**c.level
        if c.level < 0 or not (0 <= c.i < n and 0 <= c.j < n):
            out.append(f"cell {tuple(c)} out of range")
    if out:
        return out
    for c in sorted(cells):
        for l in range(c.level):
            a = c.ancestor(l)
            if a in cells:
                out.append(f"cell {tuple(c)} overlaps ancestor {tuple(a)}")
                break
    top = max(c.level for c in cells)
    area = sum(4 ** (top - c.level) for c in cells)
    full = (base_cells * 2**top) ** 2
    if not out and area != full:
        out.append(f"cells cover {area}/{full} of the domain")
    return out


def initial_partition(base_cells: int = 4, degree: int = 3,
                      max_level: int = MAX_LEVEL) -> HierPartition:
    """Uniform level-0 mesh with ``base_cells**2`` cells."""
    if degree < 2:
        raise ConfigurationError("degree must be at least 2 for an H^2 conforming space")
    if degree > 5:
        raise ConfigurationError("degrees above 5 are not supported")
    if base_cells < max(2, degree):
        raise ConfigurationError(
            f"base_cells={base_cells} too small for degree {degree}; need >= {max(2, degree)}")
    if not 0 <= max_level <= MAX_LEVEL:
        raise ConfigurationError(f"max_level must lie in [0, {MAX_LEVEL}]")
    cells = frozenset(LevelCell(0, i, j) for i in range(base_cells) for j in range(base_cells))
    return HierPartition(degree, base_cells, cells, max_level)


def uniform_partition(level: int, base_cells: int = 4, degree: int = 3,
                      max_level: int = MAX_LEVEL) -> HierPartition:
    initial_partition(base_cells, degree, max_level)
    n = base_cells * 2**level
    return HierPartition(degree, base_cells,
                         frozenset(LevelCell(level, i, j) for i in range(n) for j in range(n)),
                         max_level)


def support_extension(P: HierPartition, tau: LevelCell, k: int) -> set[LevelCell]:
    """S(tau, k): level-k cells sharing a B^k support with tau."""
    if k > tau.level:
        raise ValueError("k must not exceed the cell level")
    r = P.degree
    a = tau.ancestor(k)
    n = P.n(k)
    return {LevelCell(k, i, j)
            for i in range(max(a.i - r, 0), min(a.i + r, n - 1) + 1)
            for j in range(max(a.j - r, 0), min(a.j + r, n - 1) + 1)}


def _neighborhood(active_sets, degree, base_cells, tau):
    if tau.level == 0:
        return set()
    l = tau.level
    n = base_cells * 2**l
    r = degree
    lower = active_sets.get(l - 1, ())
    out = set()
    for i in range(max(tau.i - r, 0), min(tau.i + r, n - 1) + 1):
        for j in range(max(tau.j - r, 0), min(tau.j + r, n - 1) + 1):
            pij = (i >> 1, j >> 1)
            if pij in lower:
                out.add(LevelCell(l - 1, *pij))
    return out


def cell_neighborhood(P: HierPartition, tau: LevelCell) -> set[LevelCell]:
    """N(P, tau): active level l-1 cells containing a cell of S(tau, l)."""
    tau = LevelCell(*tau)
    if tau not in P.cells:
        raise ValueError(f"cell {tuple(tau)} is not active")
    act = {l: s for l, s in enumerate(P.active)}
    return _neighborhood(act, P.degree, P.base_cells, tau)


class _MutableMesh:
    """Working copy used by the refinement algorithms."""

    def __init__(self, P: HierPartition):
        self.P = P
        self.cells = set(P.cells)
        self.by_level: dict[int, set] = {}
        for c in P.cells:
            self.by_level.setdefault(c.level, set()).add((c.i, c.j))
        self.nrefined = 0

    def refine(self, tau: LevelCell, depth: int = 0):
        if depth > self.P.max_level + 1:
            raise LevelCapError("recursion depth exceeded the level cap")
        for nb in sorted(_neighborhood(self.by_level, self.P.degree, self.P.base_cells, tau)):
            self.refine(nb, depth + 1)
        if tau in self.cells:
            if tau.level + 1 > self.P.max_level:
                raise LevelCapError(
                    f"refining {tuple(tau)} exceeds max level {self.P.max_level}")
            self.cells.remove(tau)
            self.by_level[tau.level].discard((tau.i, tau.j))
            for ch in tau.children():
                self.cells.add(ch)
                self.by_level.setdefault(ch.level, set()).add((ch.i, ch.j))
            self.nrefined += 1

    def freeze(self) -> HierPartition:
        return self.P.with_cells(self.cells)


def recursive_refine(P: HierPartition, tau: LevelCell) -> HierPartition:
    """Refine ``tau`` after recursively refining its neighbourhood."""
    tau = LevelCell(*tau)
    if tau not in P.cells:
        raise ValueError(f"cell {tuple(tau)} is not active")
    m = _MutableMesh(P)
    m.refine(tau)
    return m.freeze()


@dataclass(frozen=True)
class RefineStats:
    marked: int
    refined: int
    added: int

    @property
    def ratio(self) -> float:
        """(#P_* - #P) / #M, the per-step complexity factor."""
        return self.added / self.marked if self.marked else 0.0


def mesh_refine_stats(P: HierPartition, marked) -> tuple[HierPartition, RefineStats]:
    marked = sorted(LevelCell(*c) for c in marked)
    bad = [tuple(c) for c in marked if c not in P.cells]
    if bad:
        raise ValueError(f"marked cells not active: {bad[:5]}")
    if not marked:
        return P, RefineStats(0, 0, 0)
    m = _MutableMesh(P)
    for tau in marked:
        if tau in m.cells:
            m.refine(tau)
    Q = m.freeze()
    return Q, RefineStats(len(marked), m.nrefined, len(Q) - len(P))


def mesh_refine(P: HierPartition, marked) -> HierPartition:
    """Admissible refinement of all marked cells."""
    return mesh_refine_stats(P, marked)[0]


def refine_uniformly(P: HierPartition) -> HierPartition:
    return mesh_refine(P, P.cells)


def is_refinement(fine: HierPartition, coarse: HierPartition) -> bool:
    """True if every cell of ``fine`` lies inside some cell of ``coarse``."""
    cc = coarse.cells
    for c in fine.cells:
        if not any(c.ancestor(l) in cc for l in range(c.level + 1)):
            return False
    return True


def admissibility_violations(P: HierPartition) -> list[str]:
    """Definition-level check: THB functions nonzero on each cell span <= 2 levels."""
    from .basis import build_basis

    B = build_basis(P)
    lo, hi = B.cell_level_range()
    out = []
    for k in np.nonzero(hi - lo > 1)[0]:
        c = B.cells[k]
        out.append(f"cell {tuple(c)} sees THB levels {lo[k]}..{hi[k]}")
    return out


def is_admissible(P: HierPartition) -> tuple[bool, list[str]]:
    v = admissibility_violations(P)
    return not v, v


def auxiliary_domain(P: HierPartition, level: int) -> set[LevelCell]:
    """U^l: level-l cells whose support extension lies inside Omega^l."""
    if level >= P.nlevels or level < 0:
        return set()
    r, n = P.degree, P.n(level)
    cand = P.active[level] | P.refined[level]
    out = set()
    for i, j in cand:
        ilo, ihi = max(i - r, 0), min(i + r, n - 1)
        jlo, jhi = max(j - r, 0), min(j + r, n - 1)
        if P.box_count("omega", level, ilo, ihi, jlo, jhi) == (ihi - ilo + 1) * (jhi - jlo + 1):
            out.add(LevelCell(level, i, j))
    return out


def omega_cells(P: HierPartition, level: int) -> set[LevelCell]:
    """Level-l cells making up Omega^l."""
    if level >= P.nlevels:
        return set()
    return {LevelCell(level, i, j) for i, j in P.active[level] | P.refined[level]}


def union_partition(P1: HierPartition, P2: HierPartition) -> HierPartition:
    """Finest common cells of two partitions (no admissibility closure)."""
    allc = P1.cells | P2.cells
    anc = set()
    for c in allc:
        for l in range(c.level):
            anc.add(c.ancestor(l))
    return P1.with_cells(c for c in allc if c not in anc)


def overlay(P1: HierPartition, P2: HierPartition, P0: HierPartition | None = None) -> HierPartition:
    """Coarsest admissible common refinement of two partitions.

    When the finest-cell union is not admissible it is closed by running
    ``mesh_refine`` on P1 until it covers the union.  If ``P0`` is given the
    cardinality bound ``#P1 + #P2 - #P0`` is checked and any excess logged.
    """
    if (P1.degree, P1.base_cells) != (P2.degree, P2.base_cells):
        raise ValueError("partitions use different degree or base cells")
    U = union_partition(P1, P2)
    if not admissibility_violations(U):
        result = U
    else:
        cur = P1
        while True:
            ucells = U.cells
            marked = [c for c in cur.cells if c not in ucells and
                      not any(c.ancestor(l) in ucells for l in range(c.level))]
            if not marked:
                break
            cur = mesh_refine(cur, marked)
        result = cur
    if P0 is not None:
        bound = len(P1) + len(P2) - len(P0)
        if len(result) > bound:
            log.warning("overlay has %d cells, above the bound %d (admissibility closure)",
                        len(result), bound)
    return result


class Edge(NamedTuple):
    """A mesh edge; axis 0 is a vertical segment x = i*h, y in [j, j+1]*h."""

    level: int
    axis: int
    i: int
    j: int
    minus: LevelCell | None
    plus: LevelCell | None

    def length(self, base_cells: int) -> float:
        return 1.0 / (base_cells * 2**self.level)

    @property
    def is_interior(self) -> bool:
        return self.minus is not None and self.plus is not None


class EdgeSet(NamedTuple):
    interior: list[Edge]
    boundary: list[Edge]


def _owner(P: HierPartition, level: int, i: int, j: int) -> LevelCell | None:
    """Active cell containing the level-l grid cell (i, j), if at level <= l."""
    for l in range(level, -1, -1):
        s = level - l
        if (i >> s, j >> s) in P.active[l]:
            return LevelCell(l, i >> s, j >> s)
    return None


def edges(P: HierPartition) -> EdgeSet:
    """Interior edges split to the finer side, plus boundary edges."""
    interior, boundary = [], []
    for c in P.sorted_cells:
        l, i, j = c
        n = P.n(l)
        for axis, di, dj in ((0, -1, 0), (0, 1, 0), (1, 0, -1), (1, 0, 1)):
            ni, nj = i + di, j + dj
            ei = i + max(di, 0)
            ej = j + max(dj, 0)
            if not (0 <= ni < n and 0 <= nj < n):
                if di + dj < 0:
                    boundary.append(Edge(l, axis, ei, ej, None, c))
                else:
                    boundary.append(Edge(l, axis, ei, ej, c, None))
                continue
            if (ni, nj) in P.active[l]:
                if di + dj > 0:
                    interior.append(Edge(l, axis, ei, ej, c, LevelCell(l, ni, nj)))
                continue
            if (ni, nj) in P.refined[l]:
                continue  # finer cells own this face
            other = _owner(P, l, ni, nj)
            if di + dj > 0:
                interior.append(Edge(l, axis, ei, ej, c, other))
            else:
                interior.append(Edge(l, axis, ei, ej, other, c))
    return EdgeSet(interior, boundary)
