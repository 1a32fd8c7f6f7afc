"""Univariate B-splines on clamped dyadic knot vectors.

Evaluation follows the Cox--de Boor recurrence with right-continuity at
knots.  The right end of the knot range is treated as a left limit so that
the clamped basis is a partition of unity on the closed interval.

Two-scale relations are computed by general knot insertion (the Oslo
algorithm), which handles the clamped boundary functions as well as the
interior ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

#: Hard cap on the refinement level of any knot vector.
MAX_LEVEL = 12
MAX_DEGREE = 5


@dataclass(frozen=True, eq=False)
class KnotVector:
    """A nondecreasing knot sequence together with its degree.

    ``level`` and ``base_cells`` are bookkeeping for the dyadic hierarchy;
    they are ``None`` for general (e.g. cardinal) knot vectors built with
    the plain constructor.
    """

    knots: np.ndarray
    degree: int
    level: int | None = None
    base_cells: int | None = None
    _key: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        t = np.asarray(self.knots, dtype=float)
        if t.ndim != 1:
            raise ValueError("knots must be one-dimensional")
        if not 0 <= self.degree <= MAX_DEGREE:
            raise ValueError(f"degree must lie in [0, {MAX_DEGREE}], got {self.degree}")
        if t.size < self.degree + 2:
            raise ValueError("need at least degree+2 knots")
        if np.any(np.diff(t) < 0):
            raise ValueError("knots must be nondecreasing")
        t.setflags(write=False)
        object.__setattr__(self, "knots", t)
        object.__setattr__(self, "_key", (self.degree, t.tobytes()))

    def __eq__(self, other):
        return isinstance(other, KnotVector) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    @property
    def dim(self) -> int:
        """Number of B-splines."""
        return self.knots.size - self.degree - 1

    @property
    def ncells(self) -> int:
        """Number of nonempty knot spans."""
        return int(np.count_nonzero(np.diff(self.knots) > 0))

    @property
    def breaks(self) -> np.ndarray:
        return np.unique(self.knots)

    def support(self, i: int) -> tuple[float, float]:
        self._check_index(i)
        return float(self.knots[i]), float(self.knots[i + self.degree + 1])

    def refine(self) -> "KnotVector":
        """Dyadic refinement: insert the midpoint of every nonempty span."""
        b = self.breaks
        mids = 0.5 * (b[:-1] + b[1:])
        t = np.sort(np.concatenate([self.knots, mids]))
        lvl = None if self.level is None else self.level + 1
        return KnotVector(t, self.degree, lvl, self.base_cells)

    def find_span(self, x) -> np.ndarray:
        """Index mu with t[mu] <= x < t[mu+1], clipped to the valid spans.

        At the right end of the range the last nonempty span is returned.
        """
        t = self.knots
        x = np.asarray(x, dtype=float)
        mu = np.searchsorted(t, x, side="right") - 1
        hi = self.dim - 1
        # last nonempty span at or below hi
        while hi > self.degree and t[hi] == t[hi + 1]:
            hi -= 1
        return np.clip(mu, self.degree, hi)

    def _check_index(self, i):
        if not 0 <= i < self.dim:
            raise ValueError(f"basis index {i} out of range [0, {self.dim})")


@lru_cache(maxsize=None)
def clamped(level: int, degree: int, base_cells: int = 4) -> KnotVector:
    """Open knot vector on [0, 1] with ``base_cells * 2**level`` uniform spans."""
    if level < 0 or level > MAX_LEVEL:
        raise ValueError(f"level must lie in [0, {MAX_LEVEL}], got {level}")
    if base_cells < 1:
        raise ValueError("base_cells must be positive")
    n = base_cells * 2**level
    interior = np.arange(1, n) / n
    t = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
    return KnotVector(t, degree, level, base_cells)


def _cox_de_boor(t, p, x, d, end):
    """d-th derivative of the single B-spline on local knots t (len p+2)."""
    if d > p:
        return np.zeros_like(x)
    if d > 0:
        out = np.zeros_like(x)
        den = t[p] - t[0]
        if den > 0:
            out += p / den * _cox_de_boor(t[:-1], p - 1, x, d - 1, end)
        den = t[p + 1] - t[1]
        if den > 0:
            out -= p / den * _cox_de_boor(t[1:], p - 1, x, d - 1, end)
        return out
    if p == 0:
        lo, hi = t[0], t[1]
        if lo == hi:
            return np.zeros_like(x)
        inside = (lo <= x) & (x < hi)
        if hi == end:
            inside |= x == end
        return inside.astype(float)
    out = np.zeros_like(x)
    den = t[p] - t[0]
    if den > 0:
        out += (x - t[0]) / den * _cox_de_boor(t[:-1], p - 1, x, 0, end)
    den = t[p + 1] - t[1]
    if den > 0:
        out += (t[p + 1] - x) / den * _cox_de_boor(t[1:], p - 1, x, 0, end)
    return out


def bspline_eval(kv: KnotVector, i: int, x, d: int = 0):
    """Value (or d-th derivative) of the i-th B-spline of ``kv`` at ``x``.

    Right-continuous at interior knots; derivatives of order above the
    degree are zero.  Accepts scalars or arrays.
    """
    kv._check_index(i)
    if d < 0:
        raise ValueError("derivative order must be nonnegative")
    xa = np.asarray(x, dtype=float)
    p = kv.degree
    t = kv.knots[i : i + p + 2]
    val = _cox_de_boor(t, p, np.atleast_1d(xa), d, kv.knots[-1])
    return float(val[0]) if xa.ndim == 0 else val.reshape(xa.shape)


def basis_ders_on_span(knots, degree: int, span: int, x, nders: int) -> np.ndarray:
    """Derivatives of the ``degree+1`` polynomial pieces active on a span.

    Returns an array of shape ``(nders+1, degree+1) + shape`` whose entry
    ``[k, a, ...]`` is the k-th derivative of B-spline ``span-degree+a``,
    restricted to the polynomial piece of knot span ``span``, at ``x``.
    ``span`` may be an integer array broadcast against ``x``.
    Points outside the span are evaluated by polynomial extension, which
    gives exact one-sided limits at span ends.
    """
    t = np.asarray(knots)
    p = degree
    x = np.asarray(x, dtype=float)
    span = np.asarray(span)
    shape = np.broadcast(x, span).shape
    x = np.broadcast_to(x, shape)
    ndu = np.zeros((p + 1, p + 1) + shape)
    ndu[0, 0] = 1.0
    left = np.zeros((p + 1,) + shape)
    right = np.zeros((p + 1,) + shape)
    for j in range(1, p + 1):
        left[j] = x - t[span + 1 - j]
        right[j] = t[span + j] - x
        saved = np.zeros(shape)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((nders + 1, p + 1) + shape)
    ders[0] = ndu[:, p]
    top = min(nders, p)
    a = np.zeros((2, p + 1) + shape)
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, top + 1):
            dk = np.zeros(shape)
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                dk += a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                dk += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                dk += a[s2, k] * ndu[r, pk]
            ders[k, r] = dk
            s1, s2 = s2, s1
    fac = p
    for k in range(1, top + 1):
        ders[k] *= fac
        fac *= p - k
    return ders


class TwoScaleRow(NamedTuple):
    coarse_index: int
    fine_indices: np.ndarray
    coefficients: np.ndarray


def _oslo_matrix(coarse: KnotVector, fine: KnotVector) -> sp.csc_matrix:
    p = coarse.degree
    tau = np.concatenate([np.full(p, coarse.knots[0]), coarse.knots,
                          np.full(p, coarse.knots[-1])])
    t = np.concatenate([np.full(p, fine.knots[0]), fine.knots,
                        np.full(p, fine.knots[-1])])
    end = tau[-1]
    rows, cols, vals = [], [], []
    for jp in range(p, p + fine.dim):
        if t[jp] >= end:
            continue
        mu = int(np.searchsorted(tau, t[jp], side="right") - 1)
        b = np.ones(1)
        for k in range(1, p + 1):
            x = t[jp + k]
            nb = np.zeros(k + 1)
            for i in range(1, k + 1):
                lo, hi = tau[mu + i - k], tau[mu + i]
                w = (x - lo) / (hi - lo)
                nb[i - 1] += b[i - 1] * (1.0 - w)
                nb[i] += b[i - 1] * w
            b = nb
        for a, c in enumerate(b):
            ci = mu - p + a - p
            if 0 <= ci < coarse.dim and c != 0.0:
                rows.append(jp - p)
                cols.append(ci)
                vals.append(c)
    return sp.csc_matrix((vals, (rows, cols)), shape=(fine.dim, coarse.dim))


def knot_insertion_matrix(coarse: KnotVector, fine: KnotVector) -> sp.csc_matrix:
    """Sparse matrix S with coarse B-spline i = sum_j S[j, i] * fine B-spline j.

    ``fine`` must contain every knot of ``coarse`` with at least the same
    multiplicity and share its degree.
    """
    if coarse.degree != fine.degree:
        raise ValueError("degree mismatch")
    return _cached_insertion(coarse, fine)


@lru_cache(maxsize=256)
def _cached_insertion(coarse, fine):
    m = _oslo_matrix(coarse, fine)
    m.sort_indices()
    return m


def two_scale(kv_coarse: KnotVector, i: int) -> TwoScaleRow:
    """Fine-level coefficients of coarse B-spline ``i`` under dyadic refinement."""
    kv_coarse._check_index(i)
    s = knot_insertion_matrix(kv_coarse, kv_coarse.refine())
    lo, hi = s.indptr[i], s.indptr[i + 1]
    return TwoScaleRow(i, s.indices[lo:hi].copy(), s.data[lo:hi].copy())


def tensor_eval(kvx: KnotVector, kvy: KnotVector, ij, p, dx: int = 0, dy: int = 0):
    """Tensor-product B-spline ``B_i(x) B_j(y)`` (or a partial derivative)."""
    i, j = ij
    if dx < 0 or dy < 0 or dx + dy > 4:
        raise ValueError("need 0 <= dx, dy and dx + dy <= 4")
    p = np.asarray(p, dtype=float)
    return bspline_eval(kvx, i, p[..., 0], dx) * bspline_eval(kvy, j, p[..., 1], dy)
