"""Problem presets for the clamped biharmonic equation on the unit square."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .basis import build_basis
from .mesh import MAX_LEVEL, initial_partition
from .solver import constrain_space

PRESETS = ("smooth", "peak", "discrete")


@dataclass(frozen=True)
class ProblemSpec:
    """Data and discretisation settings of one adaptive run.

    ``u``, ``lap_u`` and ``grad_u`` are optional; when ``u`` is given its
    clamped boundary conditions are checked by sampling.
    """

    name: str
    f: Callable
    u: Callable | None = None
    lap_u: Callable | None = None
    grad_u: Callable | None = None
    degree: int = 3
    base_cells: int = 4
    theta: float = 0.5
    tol: float = 1e-6
    max_iter: int = 20
    max_level: int = MAX_LEVEL
    seed: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must lie in (0, 1]")
        if self.tol < 0 or self.max_iter < 1:
            raise ValueError("tol must be >= 0 and max_iter >= 1")
        initial_partition(self.base_cells, self.degree, self.max_level)
        if self.u is not None:
            bad = boundary_defect(self.u, self.grad_u)
            if bad > 1e-9:
                raise ValueError(f"exact solution violates the clamped conditions ({bad:.2e})")

    @property
    def has_exact(self) -> bool:
        return self.lap_u is not None


def boundary_defect(u, grad_u=None, n: int = 200) -> float:
    """max |u| and |du/dn| over sampled boundary points."""
    t = np.linspace(0.0, 1.0, n)
    z, o = np.zeros_like(t), np.ones_like(t)
    xs = np.concatenate([t, t, z, o])
    ys = np.concatenate([z, o, t, t])
    worst = float(np.max(np.abs(u(xs, ys))))
    if grad_u is not None:
        gx, gy = grad_u(xs, ys)
        normal = np.concatenate([np.abs(gy[: 2 * n]), np.abs(gx[2 * n:])])
        worst = max(worst, float(np.max(normal)))
    return worst


# u = g(x) g(y) with g(t) = t^2 (1-t)^2
def _g(t):
    return t**2 * (1 - t) ** 2


def _g1(t):
    return 2 * t * (1 - t) * (1 - 2 * t)


def _g2(t):
    return 2 - 12 * t + 12 * t**2


def smooth_problem(**kw) -> ProblemSpec:
    return ProblemSpec(
        "smooth",
        f=lambda x, y: 24 * _g(y) + 2 * _g2(x) * _g2(y) + 24 * _g(x),
        u=lambda x, y: _g(x) * _g(y),
        lap_u=lambda x, y: _g2(x) * _g(y) + _g(x) * _g2(y),
        grad_u=lambda x, y: (_g1(x) * _g(y), _g(x) * _g1(y)),
        **kw,
    )


def peak_problem(center=(0.3, 0.7), width: float = 0.05, **kw) -> ProblemSpec:
    cx, cy = center

    def f(x, y):
        return np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * width**2)) / (2 * np.pi * width**2)

    return ProblemSpec("peak", f=f, meta={"center": list(center), "width": width}, **kw)


def discrete_problem(seed: int = 0, **kw) -> ProblemSpec:
    """f = Lap^2 V for a random V in the level-0 constrained space; u = V."""
    degree = kw.get("degree", 3)
    base = kw.get("base_cells", 4)
    P0 = initial_partition(base, degree, kw.get("max_level", MAX_LEVEL))
    space = constrain_space(build_basis(P0), P0)
    rng = np.random.default_rng(seed)
    V = space.field(rng.standard_normal(space.dim))

    def d(x, y, dx, dy):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return V(x, y, dx, dy)

    return ProblemSpec(
        "discrete",
        f=lambda x, y: d(x, y, 4, 0) + 2 * d(x, y, 2, 2) + d(x, y, 0, 4),
        u=lambda x, y: d(x, y, 0, 0),
        lap_u=lambda x, y: d(x, y, 2, 0) + d(x, y, 0, 2),
        grad_u=lambda x, y: (d(x, y, 1, 0), d(x, y, 0, 1)),
        seed=seed,
        meta={"coefficients": V.coeffs.tolist()},
        **kw,
    )


def make_problem(name: str, **kw) -> ProblemSpec:
    if name == "smooth":
        return smooth_problem(**kw)
    if name == "peak":
        return peak_problem(**kw)
    if name == "discrete":
        return discrete_problem(**kw)
    raise ValueError(f"unknown problem {name!r}; choose from {', '.join(PRESETS)}")
