"""Independent reference implementations and mesh generators for the tests.

Nothing here reuses the production B-spline or THB code paths except where
noted; the oracles favour obviously-correct brute force over speed.
"""
from __future__ import annotations

import itertools
from fractions import Fraction
from functools import lru_cache
from math import comb

import numpy as np
import sympy

from thbafem.mesh import LevelCell, initial_partition, mesh_refine


# ---- B-splines ---------------------------------------------------------------

_X = sympy.Symbol("x")


@lru_cache(maxsize=None)
def _sym_bspline(knots: tuple, degree: int, i: int, d: int):
    expr = sympy.bspline_basis(degree, tuple(sympy.Rational(k).limit_denominator(10**6) for k in knots),
                               i, _X)
    return sympy.lambdify(_X, sympy.diff(expr, _X, d) if d else expr, "math")


def sympy_bspline(knots, degree: int, i: int, x: float, d: int = 0) -> float:
    """Piecewise-polynomial B-spline from sympy; evaluate away from knots."""
    return float(_sym_bspline(tuple(float(k) for k in knots), degree, i, d)(x))


def cardinal_two_scale(degree: int) -> np.ndarray:
    """Mask of the cardinal refinement relation B(x) = sum_k a_k B(2x - k)."""
    return np.array([comb(degree + 1, k) for k in range(degree + 2)]) / 2.0**degree


# ---- dense THB oracle --------------------------------------------------------

def _open_knots(n: int, r: int) -> np.ndarray:
    return np.concatenate([np.zeros(r + 1), np.arange(1, n) / n, np.ones(r + 1)])


def _insertion_dense(n: int, r: int) -> np.ndarray:
    """Level -> level+1 refinement matrix by least squares at sample points.

    Built from sympy-free collocation with a hand-written Cox-de Boor, so it
    does not share code with the Oslo-based production matrix.
    """
    tc, tf = _open_knots(n, r), _open_knots(2 * n, r)
    xs = np.linspace(0, 1, 8 * (2 * n + r) + 1)[:-1] + 1e-3 / n
    Bc = np.array([[_cdb(tc, r, i, x) for i in range(n + r)] for x in xs])
    Bf = np.array([[_cdb(tf, r, i, x) for i in range(2 * n + r)] for x in xs])
    S, *_ = np.linalg.lstsq(Bf, Bc, rcond=None)
    S[np.abs(S) < 1e-13] = 0.0
    return S  # fine x coarse


def _cdb(t, p, i, x):
    if p == 0:
        return 1.0 if t[i] <= x < t[i + 1] else 0.0
    out = 0.0
    if t[i + p] > t[i]:
        out += (x - t[i]) / (t[i + p] - t[i]) * _cdb(t, p - 1, i, x)
    if t[i + p + 1] > t[i + 1]:
        out += (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * _cdb(t, p - 1, i + 1, x)
    return out


def omega_sets(P) -> list[set]:
    """Level-l cells covered by active cells of level >= l, by enumeration."""
    L = P.nlevels
    out = [set() for _ in range(L)]
    for c in P.cells:
        for l in range(c.level + 1):
            out[l].add((c.i >> (c.level - l), c.j >> (c.level - l)))
    return out


def _supp_cells(n, r, i, j):
    return {(a, b) for a in range(max(i - r, 0), min(i, n - 1) + 1)
            for b in range(max(j - r, 0), min(j, n - 1) + 1)}


def thb_oracle(P) -> dict:
    """(level, i, j) -> truncated function as finest-level coefficient array.

    Textbook recursion: H keeps the level-l B-splines whose support lies in
    Omega^l but not in Omega^{l+1}; truncation refines and zeroes finer
    coefficients whose support lies in Omega^{m}.
    """
    r, n0, L = P.degree, P.base_cells, P.nlevels
    om = omega_sets(P)
    S = [_insertion_dense(n0 * 2**l, r) for l in range(L - 1)]
    out = {}
    for l in range(L):
        n = n0 * 2**l
        for i in range(n + r):
            for j in range(n + r):
                sup = _supp_cells(n, r, i, j)
                if not sup <= om[l]:
                    continue
                if l + 1 < L:
                    fine = {(2 * a + da, 2 * b + db) for a, b in sup for da in (0, 1) for db in (0, 1)}
                    if fine <= om[l + 1]:
                        continue
                C = np.zeros((n + r, n + r))
                C[i, j] = 1.0
                for m in range(l + 1, L):
                    C = S[m - 1] @ C @ S[m - 1].T
                    nm = n0 * 2**m
                    for a in range(nm + r):
                        for b in range(nm + r):
                            if C[a, b] != 0.0 and _supp_cells(nm, r, a, b) <= om[m]:
                                C[a, b] = 0.0
                out[(l, i, j)] = C
    return out


def eval_fine(C: np.ndarray, n: int, r: int, x: float, y: float) -> float:
    t = _open_knots(n, r)
    bx = np.array([_cdb(t, r, i, x) for i in range(n + r)])
    by = np.array([_cdb(t, r, i, y) for i in range(n + r)])
    return float(bx @ C @ by)


# ---- edges -------------------------------------------------------------------

def neighbour_pairs(P) -> dict:
    """frozenset{c1, c2} -> shared edge length, for cells sharing a segment."""
    cells = list(P.cells)
    b = {c: c.bounds(P.base_cells) for c in cells}
    out = {}
    for c1, c2 in itertools.combinations(cells, 2):
        x0, x1, y0, y1 = b[c1]
        u0, u1, v0, v1 = b[c2]
        if np.isclose(x1, u0) or np.isclose(u1, x0):
            ov = min(y1, v1) - max(y0, v0)
        elif np.isclose(y1, v0) or np.isclose(v1, y0):
            ov = min(x1, u1) - max(x0, u0)
        else:
            continue
        if ov > 1e-14:
            out[frozenset((c1, c2))] = ov
    return out


# ---- marking -----------------------------------------------------------------

def dorfler_min_cardinality(vals, theta: float, slack: float = 1e-12) -> int:
    """Smallest subset size reaching theta * total, by exhaustive search.

    Sums are exact rationals; the threshold carries the same relative slack
    as the production rule.
    """
    vals = [Fraction(v) for v in vals]
    total = sum(vals)
    if total == 0:
        return 0
    target = (Fraction(theta) - Fraction(slack)) * total
    for k in range(1, len(vals) + 1):
        for sub in itertools.combinations(vals, k):
            if sum(sub) >= target:
                return k
    return len(vals)


# ---- mesh generators ---------------------------------------------------------

def random_mesh(rng, degree=3, base_cells=4, max_level=4, steps=4, frac=0.2, max_cells=5000):
    """Admissible mesh from random markings of cells below ``max_level``."""
    P = initial_partition(base_cells, degree)
    for _ in range(steps):
        cand = [c for c in P.sorted_cells if c.level < max_level]
        if not cand:
            break
        k = max(1, int(frac * len(cand) * rng.random()))
        marked = [cand[t] for t in rng.choice(len(cand), size=min(k, len(cand)), replace=False)]
        Q = mesh_refine(P, marked)
        if Q.nlevels - 1 > max_level or len(Q) > max_cells:
            break
        P = Q
    return P


def corner_mesh(levels: int, degree=3, base_cells=4):
    """Graded mesh refined repeatedly towards the origin."""
    P = initial_partition(base_cells, degree)
    for _ in range(levels):
        l = P.nlevels - 1
        P = mesh_refine(P, [LevelCell(l, 0, 0)])
    return P
