"""Residual a posteriori indicators for the biharmonic Galerkin solution.

Per cell tau::

    eta^2(tau) = h_tau^4 ||f - Lap^2 V||_tau^2
                 + sum_{sigma in E(tau)} h_sigma^3 ||[d Lap V / dn]||_sigma^2
                                       + h_sigma   ||[Lap V]||_sigma^2

with h_tau the cell diameter and h_sigma the (fine side) edge length.  Only
interior edges carry jump terms, and each edge contributes to both of its
cells.  Jumps use the exact one-sided polynomial pieces of the two cells.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import legendre

from .basis import (SplineField, ThbBasis, bilaplacian_at, cell_quadrature, gauss_01,
                    point_derivs)
from .mesh import Edge, HierPartition, LevelCell, edges
from .solver import _eval_f, energy_norm_error


@dataclass(frozen=True)
class EdgeArrays:
    level: np.ndarray
    axis: np.ndarray
    i: np.ndarray
    j: np.ndarray
    minus: np.ndarray  # global cell ids
    plus: np.ndarray

    def __len__(self):
        return len(self.level)


def edge_arrays(B: ThbBasis) -> EdgeArrays:
    cache = B.__dict__.setdefault("_edge_cache", {})
    if "interior" not in cache:
        es = edges(B.partition).interior
        index = {c: k for k, c in enumerate(B.cells)}
        cache["interior"] = EdgeArrays(
            np.array([e.level for e in es], dtype=np.int64),
            np.array([e.axis for e in es], dtype=np.int64),
            np.array([e.i for e in es], dtype=np.int64),
            np.array([e.j for e in es], dtype=np.int64),
            np.array([index[e.minus] for e in es], dtype=np.int64),
            np.array([index[e.plus] for e in es], dtype=np.int64),
        )
    return cache["interior"]


def _cell_h(B: ThbBasis, ids) -> np.ndarray:
    return np.sqrt(2.0) / (B.base_cells * 2.0 ** B.cell_level[ids])


def interior_terms(V: SplineField, f, cell_ids=None) -> np.ndarray:
    """h^4 ||f - Lap^2 V||^2 per cell (Gauss order r+2)."""
    B = V.basis
    q = cell_quadrature(B, B.degree + 2, 4, cell_ids)
    res = _eval_f(f, q.X, q.Y) - bilaplacian_at(V, q)
    return _cell_h(B, q.cell_ids) ** 4 * np.sum(q.W * res**2, axis=(1, 2))


def jump_terms(V: SplineField, ea: EdgeArrays) -> tuple[np.ndarray, np.ndarray]:
    """(j1, j2) per interior edge."""
    B = V.basis
    ne = len(ea)
    if ne == 0:
        return np.zeros(0), np.zeros(0)
    s, w = gauss_01(B.degree + 1)
    h = 1.0 / (B.base_cells * 2.0 ** ea.level)
    t = (np.where(ea.axis == 0, ea.j, ea.i)[:, None] + s[None, :]) * h[:, None]
    c = (np.where(ea.axis == 0, ea.i, ea.j) * h)[:, None] * np.ones_like(s)[None, :]
    x = np.where(ea.axis[:, None] == 0, c, t).ravel()
    y = np.where(ea.axis[:, None] == 0, t, c).ravel()
    nq = len(s)
    orders = [(2, 0), (0, 2), (3, 0), (1, 2), (2, 1), (0, 3)]
    vals = []
    for side in (ea.minus, ea.plus):
        d = point_derivs(V, np.repeat(side, nq), x, y, orders)
        lap = d[2, 0] + d[0, 2]
        dn_x = d[3, 0] + d[1, 2]
        dn_y = d[2, 1] + d[0, 3]
        dn = np.where(np.repeat(ea.axis, nq) == 0, dn_x, dn_y)
        vals.append((lap.reshape(ne, nq), dn.reshape(ne, nq)))
    (lm, dm), (lp, dp) = vals
    j1 = h**3 * h * np.sum(w * (dp - dm) ** 2, axis=1)
    j2 = h * h * np.sum(w * (lp - lm) ** 2, axis=1)
    return j1, j2


def _legendre_modes(k: int, s: np.ndarray, t: np.ndarray) -> list[np.ndarray]:
    """Orthogonal basis of total-degree-k polynomials on [0,1]^2."""
    out = []
    for a in range(k + 1):
        for b in range(k + 1 - a):
            pa = legendre.legval(2 * s - 1, np.eye(k + 1)[a])
            pb = legendre.legval(2 * t - 1, np.eye(k + 1)[b])
            out.append(pa[:, None] * pb[None, :])
    return out


def oscillation_terms(B: ThbBasis, f, cell_ids=None) -> np.ndarray:
    """h^4 ||f - fbar||^2 per cell, fbar the L2 projection onto P_{max(r-4,0)}."""
    nq = B.degree + 2
    q = cell_quadrature(B, nq, 0, cell_ids)
    fv = _eval_f(f, q.X, q.Y)
    s, w = gauss_01(nq)
    ww = np.outer(w, w)
    proj = np.zeros_like(fv)
    for phi in _legendre_modes(max(B.degree - 4, 0), s, s):
        coef = np.sum(fv * phi * ww, axis=(1, 2)) / np.sum(phi**2 * ww)
        proj += coef[:, None, None] * phi[None]
    return _cell_h(B, q.cell_ids) ** 4 * np.sum(q.W * (fv - proj) ** 2, axis=(1, 2))


@dataclass(frozen=True, eq=False)
class IndicatorMap:
    """Per-cell indicator parts, in the cell order of the basis."""

    cells: list
    eta2_interior: np.ndarray
    eta2_j1: np.ndarray
    eta2_j2: np.ndarray
    osc2: np.ndarray

    @property
    def eta2(self) -> np.ndarray:
        return self.eta2_interior + self.eta2_j1 + self.eta2_j2

    @property
    def total_eta2(self) -> float:
        return float(np.sum(self.eta2))

    @property
    def total_osc2(self) -> float:
        return float(np.sum(self.osc2))

    def as_dict(self) -> dict:
        return dict(zip(self.cells, self.eta2.tolist()))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["level", "i", "j", "eta2_interior", "eta2_j1", "eta2_j2", "osc2"])
            for k, c in enumerate(self.cells):
                wr.writerow([c.level, c.i, c.j, repr(float(self.eta2_interior[k])),
                             repr(float(self.eta2_j1[k])), repr(float(self.eta2_j2[k])),
                             repr(float(self.osc2[k]))])


def estimate(V: SplineField, f) -> IndicatorMap:
    """All indicator parts of ``V`` for data ``f``."""
    B = V.basis
    nc = len(B.cells)
    interior = interior_terms(V, f)
    ea = edge_arrays(B)
    j1, j2 = jump_terms(V, ea)
    c1 = np.bincount(ea.minus, j1, nc) + np.bincount(ea.plus, j1, nc)
    c2 = np.bincount(ea.minus, j2, nc) + np.bincount(ea.plus, j2, nc)
    return IndicatorMap(B.cells, interior, c1, c2, oscillation_terms(B, f))


# ---- single-item accessors ------------------------------------------------

def _cell_id(B: ThbBasis, tau) -> int:
    tau = LevelCell(*tau)
    ids = B.cell_ids([tau]) if tau in B.partition.cells else None
    if ids is None:
        raise ValueError(f"cell {tuple(tau)} is not active")
    return int(ids[0])


def interior_residual(V: SplineField, f, tau) -> float:
    B = V.basis
    return float(interior_terms(V, f, np.array([_cell_id(B, tau)]))[0])


def edge_jump_terms(V: SplineField, sigma: Edge) -> tuple[float, float]:
    if not sigma.is_interior:
        raise ValueError("boundary edges carry no jump terms")
    B = V.basis
    ids = B.cell_ids([sigma.minus, sigma.plus])
    ea = EdgeArrays(np.array([sigma.level]), np.array([sigma.axis]), np.array([sigma.i]),
                    np.array([sigma.j]), ids[:1], ids[1:])
    j1, j2 = jump_terms(V, ea)
    return float(j1[0]), float(j2[0])


def indicator(V: SplineField, f, tau, edge_set=None) -> float:
    """eta^2(V, tau): interior part plus the jumps on the edges of tau."""
    B = V.basis
    k = _cell_id(B, tau)
    tau = B.cells[k]
    es = edge_set.interior if edge_set is not None else edges(B.partition).interior
    total = interior_residual(V, f, tau)
    for e in es:
        if e.minus == tau or e.plus == tau:
            total += sum(edge_jump_terms(V, e))
    return total


def oscillation(f, V: SplineField, tau) -> float:
    """osc(tau) = h^2 ||f - fbar||_tau (not squared)."""
    B = V.basis
    return float(np.sqrt(oscillation_terms(B, f, np.array([_cell_id(B, tau)]))[0]))


def total_error(U: SplineField, lap_exact: Callable, f, P: HierPartition | None = None) -> float:
    """sqrt(|||u - U|||^2 + osc^2(f, Omega))."""
    e = energy_norm_error(U, lap_exact)
    osc2 = float(np.sum(oscillation_terms(U.basis, f)))
    return float(np.sqrt(e**2 + osc2))
