"""Hierarchical and truncated hierarchical B-spline bases.

The basis is built level by level.  For every selected function we keep a
sparse table of level-m tensor B-spline coefficients; on an active cell of
level m the truncated function equals the sum of its level-m table entries.
Entries whose support misses Omega^m are pruned since they cannot affect
cells of level m or finer.

The result is summarised in an extraction matrix ``E`` with one row per
THB function and one column per (cell, local tensor B-spline) pair, so that
on cell ``c`` the function ``f`` is ``sum_k E[f, c*nloc + k] * B_k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .mesh import HierPartition, LevelCell
from .splines import basis_ders_on_span, clamped, knot_insertion_matrix, tensor_eval


def gauss_01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class ThbFunction:
    """One (possibly truncated) hierarchical basis function.

    ``table[m]`` maps level-m tensor indices to coefficients; on an active
    level-m cell the function equals the corresponding combination.
    """

    level: int
    index: tuple[int, int]
    table: Mapping[int, Mapping[tuple[int, int], float]]
    degree: int
    base_cells: int
    active: bool = True
    partition: HierPartition | None = field(default=None, repr=False, compare=False)

    @property
    def truncated(self) -> bool:
        return self.partition is not None


def _box(k, r, n):
    """Inclusive cell range of the support of 1D B-spline(s) k."""
    return np.maximum(k - r, 0), np.minimum(k, n - 1)


@lru_cache(maxsize=64)
def _two_scale_padded(level: int, degree: int, base_cells: int):
    S = knot_insertion_matrix(clamped(level, degree, base_cells),
                              clamped(level + 1, degree, base_cells)).tocsc()
    dim = S.shape[1]
    width = degree + 2
    first = np.zeros(dim, dtype=np.int64)
    coef = np.zeros((dim, width))
    for k in range(dim):
        idx = S.indices[S.indptr[k]:S.indptr[k + 1]]
        val = S.data[S.indptr[k]:S.indptr[k + 1]]
        first[k] = idx.min()
        off = idx - first[k]
        if off.max() >= width:  # pragma: no cover - impossible for dyadic refinement
            raise AssertionError("two-scale row wider than expected")
        coef[k, off] = val
    return first, coef


class ThbBasis:
    """THB basis of a partition together with per-cell extraction data."""

    def __init__(self, P: HierPartition):
        self.partition = P
        self.degree = r = P.degree
        self.base_cells = P.base_cells
        self.nlevels = P.nlevels
        self.nloc = (r + 1) ** 2

        self.cells: list[LevelCell] = P.sorted_cells
        lv = np.array([c.level for c in self.cells], dtype=np.int64)
        self.cell_level = lv
        self.cell_i = np.array([c.i for c in self.cells], dtype=np.int64)
        self.cell_j = np.array([c.j for c in self.cells], dtype=np.int64)
        self.level_offset = np.searchsorted(lv, np.arange(self.nlevels + 1))
        self.level_keys = []
        for l in range(self.nlevels):
            s, e = self.level_offset[l], self.level_offset[l + 1]
            self.level_keys.append(self.cell_i[s:e] * P.n(l) + self.cell_j[s:e])
        self._build()

    # ------------------------------------------------------------------
    def _cell_lookup(self, level, ci, cj):
        """Global cell id of active level-l cells (i, j); -1 if not active."""
        n = self.partition.n(level)
        keys = self.level_keys[level]
        ci = np.asarray(ci)
        cj = np.asarray(cj)
        ok = (ci >= 0) & (ci < n) & (cj >= 0) & (cj < n)
        flat = np.where(ok, ci * n + cj, -1)
        pos = np.searchsorted(keys, flat)
        pos_c = np.minimum(pos, max(len(keys) - 1, 0))
        hit = ok & (len(keys) > 0)
        if len(keys):
            hit &= keys[pos_c] == flat
        return np.where(hit, self.level_offset[level] + pos_c, -1)

    def _hb_level(self, l):
        """Tensor indices of the HB functions of level l."""
        P, r = self.partition, self.degree
        s, e = self.level_offset[l], self.level_offset[l + 1]
        if s == e:
            return np.zeros((0, 2), dtype=np.int64)
        a = np.arange(r + 1)
        fi = (self.cell_i[s:e, None] + a[None, :]).ravel()
        fj = (self.cell_j[s:e, None] + a[None, :]).ravel()
        fi = np.repeat(fi.reshape(-1, r + 1), r + 1, axis=1).ravel()
        fj = np.tile(fj.reshape(-1, r + 1), (1, r + 1)).ravel()
        cand = np.unique(np.stack([fi, fj], axis=1), axis=0)
        n = P.n(l)
        ilo, ihi = _box(cand[:, 0], r, n)
        jlo, jhi = _box(cand[:, 1], r, n)
        inside = P.box_count("omega", l, ilo, ihi, jlo, jhi) == (ihi - ilo + 1) * (jhi - jlo + 1)
        return cand[inside]

    def _build(self):
        P, r = self.partition, self.degree
        nloc = self.nloc
        hb = [self._hb_level(l) for l in range(self.nlevels)]
        self.fun_level = np.concatenate([np.full(len(h), l, dtype=np.int64) for l, h in enumerate(hb)])
        idx = np.concatenate(hb, axis=0)
        self.fun_i = idx[:, 0].copy()
        self.fun_j = idx[:, 1].copy()
        self.fun_offset = np.concatenate([[0], np.cumsum([len(h) for h in hb])])
        nf = len(self.fun_level)

        tables = []
        rows, cols, vals = [], [], []
        fid = np.zeros(0, dtype=np.int64)
        kx = np.zeros(0, dtype=np.int64)
        ky = np.zeros(0, dtype=np.int64)
        val = np.zeros(0)
        for m in range(self.nlevels):
            n = P.n(m)
            if m > 0:
                # expand entries whose support meets Omega^m
                ilo, ihi = _box(kx, r, n // 2)
                jlo, jhi = _box(ky, r, n // 2)
                touch = P.box_count("refined", m - 1, ilo, ihi, jlo, jhi) > 0
                fid, kx, ky, val = fid[touch], kx[touch], ky[touch], val[touch]
                first, coef = _two_scale_padded(m - 1, r, self.base_cells)
                w = r + 2
                cx = coef[kx]  # (ne, w)
                cy = coef[ky]
                ex = first[kx][:, None] + np.arange(w)[None, :]
                ey = first[ky][:, None] + np.arange(w)[None, :]
                cval = val[:, None, None] * cx[:, :, None] * cy[:, None, :]
                nfx = np.broadcast_to(ex[:, :, None], cval.shape).ravel()
                nfy = np.broadcast_to(ey[:, None, :], cval.shape).ravel()
                nfid = np.broadcast_to(fid[:, None, None], cval.shape).ravel()
                cval = cval.ravel()
                nz = cval != 0.0
                nfx, nfy, nfid, cval = nfx[nz], nfy[nz], nfid[nz], cval[nz]
                dim1 = n + r
                key = (nfid * dim1 + nfx) * dim1 + nfy
                ukey, inv = np.unique(key, return_inverse=True)
                val = np.bincount(inv, weights=cval)
                fid = ukey // (dim1 * dim1)
                kx = (ukey // dim1) % dim1
                ky = ukey % dim1
                # truncation: drop functions inside Omega^m; prune those missing it
                ilo, ihi = _box(kx, r, n)
                jlo, jhi = _box(ky, r, n)
                cnt = P.box_count("omega", m, ilo, ihi, jlo, jhi)
                keep = (cnt > 0) & (cnt < (ihi - ilo + 1) * (jhi - jlo + 1))
                fid, kx, ky, val = fid[keep], kx[keep], ky[keep], val[keep]
            s, e = self.fun_offset[m], self.fun_offset[m + 1]
            fid = np.concatenate([fid, np.arange(s, e)])
            kx = np.concatenate([kx, self.fun_i[s:e]])
            ky = np.concatenate([ky, self.fun_j[s:e]])
            val = np.concatenate([val, np.ones(e - s)])
            tables.append((fid, kx, ky, val))

            # scatter onto active level-m cells
            a = np.arange(r + 1)
            ci = kx[:, None, None] - a[None, :, None]
            cj = ky[:, None, None] - a[None, None, :]
            ci, cj = np.broadcast_arrays(ci, cj)
            cid = self._cell_lookup(m, ci, cj)
            loc = (kx[:, None, None] - ci) * (r + 1) + (ky[:, None, None] - cj)
            hit = cid >= 0
            rows.append(np.broadcast_to(fid[:, None, None], ci.shape)[hit])
            cols.append((cid * nloc + loc)[hit])
            vals.append(np.broadcast_to(val[:, None, None], ci.shape)[hit])

        self.tables = tables
        E = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(nf, len(self.cells) * nloc))
        E.sum_duplicates()
        E.sort_indices()
        self.E = E

    # ------------------------------------------------------------------
    def __len__(self):
        return len(self.fun_level)

    def counts_per_level(self) -> list[int]:
        return [int(c) for c in np.diff(self.fun_offset)]

    def function_id(self, level, i, j) -> int:
        s, e = self.fun_offset[level], self.fun_offset[level + 1]
        key = self.fun_i[s:e] * 100000 + self.fun_j[s:e]
        pos = np.searchsorted(key, i * 100000 + j)
        if pos < e - s and key[pos] == i * 100000 + j:
            return int(s + pos)
        raise KeyError((level, i, j))

    def function(self, f: int) -> ThbFunction:
        table = {}
        for m, (fid, kx, ky, val) in enumerate(self.tables):
            sel = np.nonzero(fid == f)[0]
            if len(sel):
                table[m] = {(int(kx[q]), int(ky[q])): float(val[q]) for q in sel}
        return ThbFunction(int(self.fun_level[f]), (int(self.fun_i[f]), int(self.fun_j[f])),
                           table, self.degree, self.base_cells, True, self.partition)

    @cached_property
    def functions(self) -> list[ThbFunction]:
        per = {}
        for m, (fid, kx, ky, val) in enumerate(self.tables):
            for f, a, b, v in zip(fid.tolist(), kx.tolist(), ky.tolist(), val.tolist()):
                per.setdefault(f, {}).setdefault(m, {})[(a, b)] = v
        return [ThbFunction(int(self.fun_level[f]), (int(self.fun_i[f]), int(self.fun_j[f])),
                            per.get(f, {}), self.degree, self.base_cells, True, self.partition)
                for f in range(len(self))]

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Boolean (function x cell) matrix: function nonzero on cell."""
        ncell = len(self.cells)
        R = sp.csr_matrix((np.ones(ncell * self.nloc), (np.arange(ncell * self.nloc),
                           np.repeat(np.arange(ncell), self.nloc))), shape=(ncell * self.nloc, ncell))
        K = (self.E @ R).tocsr()
        K.data = (K.data > 0).astype(float)
        K.eliminate_zeros()
        return K

    def cell_level_range(self) -> tuple[np.ndarray, np.ndarray]:
        """Min and max origin level of THB functions nonzero on each cell."""
        K = self.incidence.tocoo()
        ncell = len(self.cells)
        lo = np.full(ncell, np.iinfo(np.int64).max)
        hi = np.full(ncell, -1)
        np.minimum.at(lo, K.col, self.fun_level[K.row])
        np.maximum.at(hi, K.col, self.fun_level[K.row])
        return lo, hi

    def cell_functions(self, c: int) -> tuple[np.ndarray, np.ndarray]:
        """Function ids and local coefficient rows on cell ``c``."""
        blk = self.E[:, c * self.nloc:(c + 1) * self.nloc].tocsr()
        nzrows = np.nonzero(np.diff(blk.indptr))[0]
        return nzrows, blk[nzrows].toarray()

    def local_coeffs(self, coeffs) -> np.ndarray:
        """Per-cell tensor B-spline coefficients, shape (ncells, r+1, r+1)."""
        u = self.E.T @ np.asarray(coeffs, dtype=float)
        return u.reshape(len(self.cells), self.degree + 1, self.degree + 1)

    def cell_ids(self, cells) -> np.ndarray:
        index = {c: k for k, c in enumerate(self.cells)}
        return np.array([index[LevelCell(*c)] for c in cells], dtype=np.int64)

    @cached_property
    def patch(self) -> sp.csr_matrix:
        """Boolean (cell x cell) matrix of omega_tau: cells touched by functions alive on tau."""
        K = self.incidence
        W = (K.T @ K).tocsr()
        W.data[:] = 1.0
        return W

    # ---- tabulation --------------------------------------------------
    def tabulate_1d(self, cell_ids, xi, nders: int, axis: int) -> np.ndarray:
        """B-spline derivatives along one axis at reference points of cells.

        ``xi`` has shape (nq,) (shared reference points) or (ncells, nq).
        Returns an array (nders+1, ncells, r+1, nq).
        """
        cell_ids = np.asarray(cell_ids)
        xi = np.asarray(xi, dtype=float)
        xi = np.broadcast_to(xi, (len(cell_ids),) + xi.shape[-1:])
        r = self.degree
        out = np.zeros((nders + 1, len(cell_ids), r + 1, xi.shape[-1]))
        idx = self.cell_i if axis == 0 else self.cell_j
        levels = self.cell_level[cell_ids]
        for l in np.unique(levels):
            sel = np.nonzero(levels == l)[0]
            n = self.partition.n(int(l))
            kv = clamped(int(l), r, self.base_cells)
            ii = idx[cell_ids[sel]][:, None]
            x = (ii + xi[sel]) / n
            d = basis_ders_on_span(kv.knots, r, ii + r, x, nders)  # (nd+1, r+1, ns, nq)
            out[:, sel] = np.moveaxis(d, 2, 1)
        return out

    def locate(self, x, y) -> np.ndarray:
        """Global ids of the active cells containing the points."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if np.any((x < 0) | (x > 1) | (y < 0) | (y > 1)):
            raise ValueError("points must lie in the closed unit square")
        out = np.full(x.shape, -1, dtype=np.int64)
        for l in range(self.nlevels):
            n = self.partition.n(l)
            ci = np.minimum(np.floor(x * n).astype(np.int64), n - 1)
            cj = np.minimum(np.floor(y * n).astype(np.int64), n - 1)
            cid = self._cell_lookup(l, ci, cj)
            fill = (out < 0) & (cid >= 0)
            out[fill] = cid[fill]
        return out

    def local_point_values(self, cid, x, y, dx: int, dy: int) -> np.ndarray:
        """Local tensor B-spline derivative values at points, shape (npts, r+1, r+1)."""
        cid = np.asarray(cid)
        n = self.base_cells * 2.0 ** self.cell_level[cid]
        xi = (x * n - self.cell_i[cid])[:, None]
        eta = (y * n - self.cell_j[cid])[:, None]
        bx = self.tabulate_1d(cid, xi, dx, 0)[dx, :, :, 0]
        by = self.tabulate_1d(cid, eta, dy, 1)[dy, :, :, 0]
        return bx[:, :, None] * by[:, None, :]


@lru_cache(maxsize=16)
def build_basis(P: HierPartition) -> ThbBasis:
    """THB basis of ``P`` (cached per partition)."""
    return ThbBasis(P)


def hb_select(P: HierPartition) -> list[ThbFunction]:
    """Untruncated hierarchical B-spline basis of ``P``."""
    B = build_basis(P)
    return [ThbFunction(int(l), (int(i), int(j)), {int(l): {(int(i), int(j)): 1.0}},
                        P.degree, P.base_cells)
            for l, i, j in zip(B.fun_level, B.fun_i, B.fun_j)]


def truncate_all(basis: list[ThbFunction], P: HierPartition) -> list[ThbFunction]:
    """Truncated versions of the given HB functions on ``P``."""
    B = build_basis(P)
    funcs = B.functions
    return [funcs[B.function_id(F.level, *F.index)] for F in basis]


def thb_eval(F: ThbFunction, p, dx: int = 0, dy: int = 0) -> float:
    """Value or partial derivative of a (truncated) basis function at ``p``.

    Untruncated functions evaluate as the plain tensor B-spline.  Truncated
    ones use the table of the level of the active cell containing ``p``.
    """
    x, y = map(float, p)
    if F.partition is None:
        total = 0.0
        for l, tab in F.table.items():
            kv = clamped(l, F.degree, F.base_cells)
            for ij, c in tab.items():
                total += c * tensor_eval(kv, kv, ij, (x, y), dx, dy)
        return total
    P = F.partition
    cell = P.locate(x, y)
    tab = F.table.get(cell.level)
    if not tab:
        return 0.0
    total = 0.0
    r = P.degree
    for (i, j), c in tab.items():
        if cell.i - r <= i <= cell.i + r and cell.j - r <= j <= cell.j + r:
            total += c * _span_tensor(P, cell, i, j, x, y, dx, dy)
    return total


def _span_tensor(P, cell, i, j, x, y, dx, dy):
    """Tensor B-spline (i, j) of the cell's level, using the cell's polynomial piece."""
    r = P.degree
    a, b = i - cell.i, j - cell.j
    if not (0 <= a <= r and 0 <= b <= r):
        return 0.0
    kv = clamped(cell.level, r, P.base_cells)
    bx = basis_ders_on_span(kv.knots, r, cell.i + r, x, dx)[dx, a]
    by = basis_ders_on_span(kv.knots, r, cell.j + r, y, dy)[dy, b]
    return float(bx * by)


@dataclass(frozen=True, eq=False)
class SplineField:
    """A spline ``sum_k coeffs[k] * T_{index[k]}`` on a THB basis.

    ``index`` selects the functions carrying coefficients (e.g. the
    H^2_0 subset); ``None`` means the full basis.
    """

    basis: ThbBasis
    coeffs: np.ndarray
    index: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        expected = len(self.basis) if self.index is None else len(self.index)
        if c.shape != (expected,):
            raise ValueError(f"expected {expected} coefficients, got shape {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @property
    def partition(self) -> HierPartition:
        return self.basis.partition

    @cached_property
    def full_coeffs(self) -> np.ndarray:
        if self.index is None:
            return self.coeffs
        out = np.zeros(len(self.basis))
        out[self.index] = self.coeffs
        return out

    @cached_property
    def local(self) -> np.ndarray:
        """Per-cell tensor B-spline coefficients (ncells, r+1, r+1)."""
        return self.basis.local_coeffs(self.full_coeffs)

    def scaled(self, a: float) -> "SplineField":
        return SplineField(self.basis, a * self.coeffs, self.index)

    def __call__(self, x, y, dx: int = 0, dy: int = 0):
        return evaluate_points(self, x, y, dx, dy)


def point_derivs(V: SplineField, cid, x, y, orders) -> dict:
    """Derivatives of ``V`` at points, each taken on the given cell's polynomial piece.

    Using the piece of an adjacent cell gives exact one-sided limits on
    cell boundaries.
    """
    B = V.basis
    cid = np.asarray(cid)
    n = B.base_cells * 2.0 ** B.cell_level[cid]
    xi = (x * n - B.cell_i[cid])[:, None]
    eta = (y * n - B.cell_j[cid])[:, None]
    mx = max(o[0] for o in orders)
    my = max(o[1] for o in orders)
    bx = B.tabulate_1d(cid, xi, mx, 0)[..., 0]  # (mx+1, npts, r+1)
    by = B.tabulate_1d(cid, eta, my, 1)[..., 0]
    u = V.local[cid]
    return {(dx, dy): np.einsum("qab,qa,qb->q", u, bx[dx], by[dy]) for dx, dy in orders}


def evaluate_points(V: SplineField, x, y, dx: int = 0, dy: int = 0, cid=None) -> np.ndarray:
    """Vectorized field evaluation using the local coefficients of each cell."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x, y = np.broadcast_arrays(x, y)
    shape = x.shape
    x, y = x.ravel(), y.ravel()
    if cid is None:
        cid = V.basis.locate(x, y)
    return point_derivs(V, cid, x, y, [(dx, dy)])[dx, dy].reshape(shape)


def field_eval(V: SplineField, p, dx: int = 0, dy: int = 0) -> float:
    """Value or partial derivative of a spline field at one point."""
    if dx < 0 or dy < 0 or dx + dy > 4:
        raise ValueError("need 0 <= dx, dy and dx + dy <= 4")
    x, y = map(float, p)
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise ValueError(f"point {p} outside the unit square")
    return float(evaluate_points(V, x, y, dx, dy)[0])


def field_eval_global(V: SplineField, p, dx: int = 0, dy: int = 0) -> float:
    """Reference evaluation summing every basis function (slow; for tests)."""
    funcs = V.basis.functions
    c = V.full_coeffs
    return float(sum(c[k] * thb_eval(funcs[k], p, dx, dy) for k in np.nonzero(c)[0]))


def _choose_dual_cells(B: ThbBasis) -> np.ndarray:
    """For each function the active origin-level cell in its support farthest
    from the boundary (ties: smallest (i, j))."""
    r = B.degree
    out = np.full(len(B), -1, dtype=np.int64)
    a = np.arange(r + 1)
    for l in range(B.nlevels):
        s, e = B.fun_offset[l], B.fun_offset[l + 1]
        if s == e:
            continue
        n = B.partition.n(l)
        ci = B.fun_i[s:e, None, None] - r + a[None, :, None]
        cj = B.fun_j[s:e, None, None] - r + a[None, None, :]
        ci, cj = np.broadcast_arrays(ci, cj)
        cid = B._cell_lookup(l, ci, cj).reshape(e - s, -1)
        depth = np.minimum(np.minimum(ci + 0.5, n - ci - 0.5),
                           np.minimum(cj + 0.5, n - cj - 0.5)).reshape(e - s, -1)
        depth = np.where(cid >= 0, depth, -np.inf)
        best = np.argmax(depth, axis=1)
        out[s:e] = cid[np.arange(e - s), best]
    if np.any(out < 0):  # pragma: no cover - every HB function touches an active cell
        raise AssertionError("function without an active cell of its level")
    return out


def local_projection(B: ThbBasis, cell_ids, v, nquad: int | None = None) -> np.ndarray:
    """L2(cell) projection of ``v`` onto the local tensor B-splines of each cell.

    Returns coefficients of shape (ncells, r+1, r+1).
    """
    r = B.degree
    cell_ids = np.asarray(cell_ids)
    nq = nquad or r + 2
    xi, w = gauss_01(nq)
    bx = B.tabulate_1d(cell_ids, xi, 0, 0)[0]  # (nc, r+1, nq)
    by = B.tabulate_1d(cell_ids, xi, 0, 1)[0]
    n = B.base_cells * 2.0 ** B.cell_level[cell_ids]
    X = (B.cell_i[cell_ids, None] + xi[None, :]) / n[:, None]
    Y = (B.cell_j[cell_ids, None] + xi[None, :]) / n[:, None]
    XX = np.broadcast_to(X[:, :, None], (len(cell_ids), nq, nq))
    YY = np.broadcast_to(Y[:, None, :], (len(cell_ids), nq, nq))
    if isinstance(v, SplineField):
        vals = evaluate_points(v, XX.ravel(), YY.ravel()).reshape(XX.shape)
    else:
        vals = np.asarray(v(XX, YY), dtype=float) * np.ones(XX.shape)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite values of v at quadrature points")
    # Weighted least squares factorises per direction; using pseudo-inverses of
    # sqrt(w)-scaled collocation matrices avoids squaring their condition number.
    sw = np.sqrt(w)
    Ax = np.linalg.pinv(np.swapaxes(bx, 1, 2) * sw[None, :, None])  # (nc, r+1, nq)
    Ay = np.linalg.pinv(np.swapaxes(by, 1, 2) * sw[None, :, None])
    Vw = vals * sw[None, :, None] * sw[None, None, :]
    return np.einsum("caq,cqp,cbp->cab", Ax, Vw, Ay)


def quasi_interpolate(v, P: HierPartition, basis: ThbBasis | None = None,
                      nquad: int | None = None) -> SplineField:
    """Local-dual quasi-interpolant onto the full THB space of ``P``.

    ``v`` is a vectorized callable ``v(x, y)`` or a :class:`SplineField`.
    """
    B = basis if basis is not None else build_basis(P)
    dual = _choose_dual_cells(B)
    ucell, inv = np.unique(dual, return_inverse=True)
    C = local_projection(B, ucell, v, nquad)
    a = B.fun_i - B.cell_i[dual]
    b = B.fun_j - B.cell_j[dual]
    return SplineField(B, C[inv, a, b])


@dataclass(frozen=True)
class CellQuadrature:
    """Tensor Gauss rule on a set of cells, with 1D B-spline tables."""

    cell_ids: np.ndarray
    X: np.ndarray  # (nc, nq, nq)
    Y: np.ndarray
    W: np.ndarray  # physical weights
    bx: np.ndarray  # (nders+1, nc, r+1, nq)
    by: np.ndarray


def cell_quadrature(B: ThbBasis, nq: int, nders: int = 4, cell_ids=None) -> CellQuadrature:
    cache = B.__dict__.setdefault("_quad_cache", {})
    key = (nq, nders, None if cell_ids is None else np.asarray(cell_ids).tobytes())
    if key in cache:
        return cache[key]
    ids = np.arange(len(B.cells)) if cell_ids is None else np.asarray(cell_ids)
    xi, w = gauss_01(nq)
    h = 1.0 / (B.base_cells * 2.0 ** B.cell_level[ids])
    X = (B.cell_i[ids, None] + xi[None, :]) * h[:, None]
    Y = (B.cell_j[ids, None] + xi[None, :]) * h[:, None]
    shape = (len(ids), nq, nq)
    q = CellQuadrature(
        ids,
        np.broadcast_to(X[:, :, None], shape).copy(),
        np.broadcast_to(Y[:, None, :], shape).copy(),
        (h**2)[:, None, None] * np.outer(w, w)[None],
        B.tabulate_1d(ids, xi, nders, 0),
        B.tabulate_1d(ids, xi, nders, 1),
    )
    if cell_ids is None:
        cache[key] = q
    return q


def field_derivs(V: SplineField, q: CellQuadrature, orders) -> dict:
    """Partial derivatives of ``V`` at the quadrature points, per order pair."""
    u = V.local[q.cell_ids]
    return {(dx, dy): np.einsum("cab,caq,cbp->cqp", u, q.bx[dx], q.by[dy])
            for dx, dy in orders}


def laplacian_at(V: SplineField, q: CellQuadrature) -> np.ndarray:
    d = field_derivs(V, q, [(2, 0), (0, 2)])
    return d[2, 0] + d[0, 2]


def bilaplacian_at(V: SplineField, q: CellQuadrature) -> np.ndarray:
    d = field_derivs(V, q, [(4, 0), (2, 2), (0, 4)])
    return d[4, 0] + 2.0 * d[2, 2] + d[0, 4]
