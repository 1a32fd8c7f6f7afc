"""Doerfler (bulk) marking with a minimal-cardinality greedy prefix."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

SLACK = 1e-12


@dataclass(frozen=True)
class MarkingResult:
    marked: tuple
    theta: float
    fraction: float
    converged: bool = False

    def __len__(self):
        return len(self.marked)


def dorfler_mark(indicators: Mapping, theta: float) -> MarkingResult:
    """Smallest set of cells carrying a ``theta`` share of sum(eta^2).

    Cells are sorted by eta^2 descending with ties broken by the cell key
    (``(level, i, j)`` ascending), and the shortest prefix reaching the
    threshold (up to a relative slack of 1e-12 against rounding) is returned.
    All-zero indicators give an empty marking with
    ``converged=True``.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    keys = list(indicators.keys())
    vals = np.array([float(indicators[k]) for k in keys])
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ValueError("indicators must be finite and nonnegative")
    total = float(vals.sum())
    if total == 0.0:
        return MarkingResult((), theta, 1.0, True)
    order = sorted(range(len(keys)), key=lambda k: (-vals[k], keys[k]))
    # relative slack so that e.g. 3 equal cells meet theta = 0.3 of 10
    target = theta * total - SLACK * total
    acc = 0.0
    chosen = []
    for k in order:
        if vals[k] == 0.0:
            break
        chosen.append(keys[k])
        acc += vals[k]
        if acc >= target:
            break
    if acc < target:
        # float summation fell a hair short: take every positive cell
        chosen = [keys[k] for k in order if vals[k] > 0]
        acc = total
    return MarkingResult(tuple(chosen), theta, float(acc / total))
