"""The adaptive loop SOLVE -> ESTIMATE -> MARK -> REFINE and its diagnostics."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .basis import SplineField, build_basis
from .estimator import IndicatorMap, estimate
from .marking import dorfler_mark
from .mesh import (HierPartition, LevelCapError, initial_partition, mesh_refine,
                   refine_uniformly)
from .problems import ProblemSpec
from .solver import assemble, constrain_space, energy_distance, energy_norm_error, solve

log = logging.getLogger(__name__)

CSV_COLUMNS = ["iter", "ncells", "ndof", "eta2", "osc2", "energy_err2", "total_err2",
               "marked", "alpha_step", "wall_ms"]
C_GRID = tuple(10.0**k for k in range(-3, 4))


@dataclass
class IterationRecord:
    iter: int
    ncells: int
    ndof: int
    eta2: float
    osc2: float
    energy_err2: float  # nan when no exact solution is known
    total_err2: float
    marked: int
    alpha_step: float  # quasi-error ratio with C = 1 (nan on the first step)
    wall_ms: float

    def row(self) -> list:
        return [self.iter, self.ncells, self.ndof] + [
            repr(float(getattr(self, c))) for c in CSV_COLUMNS[3:7]] + [
            self.marked, repr(float(self.alpha_step)), f"{self.wall_ms:.3f}"]


@dataclass
class AfemRun:
    """Outcome of :func:`run_afem`."""

    spec: ProblemSpec
    records: list[IterationRecord]
    partitions: list[HierPartition]
    fields: list[SplineField]
    indicators: list[IndicatorMap]
    marked: list[tuple]
    status: str
    summary: dict = field(default_factory=dict)
    solver_stats: list[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, k):
        return self.records[k]

    def __iter__(self):
        return iter(self.records)


def write_records(records: Sequence[IterationRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_COLUMNS)
        for rec in records:
            wr.writerow(rec.row())


def read_records(path) -> list[IterationRecord]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(rd.fieldnames or ())
        if missing:
            raise ValueError(f"missing columns: {sorted(missing)}")
        out = []
        for row in rd:
            out.append(IterationRecord(
                int(row["iter"]), int(row["ncells"]), int(row["ndof"]),
                *(float(row[c]) for c in CSV_COLUMNS[3:7]),
                int(row["marked"]), float(row["alpha_step"]), float(row["wall_ms"])))
        return out


def field_document(U: SplineField) -> dict:
    B = U.basis
    idx = np.arange(len(B)) if U.index is None else U.index
    return {"mesh": B.partition.to_dict(),
            "functions": [[int(B.fun_level[k]), int(B.fun_i[k]), int(B.fun_j[k])] for k in idx],
            "coefficients": [float(c) for c in U.coeffs]}


def run_afem(spec: ProblemSpec, output: str | Path | None = None,
             dump_indicators: bool = False, keep_fields: bool = True) -> AfemRun:
    """Run the adaptive loop; write outputs to ``output`` when given."""
    out = Path(output) if output is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    P = initial_partition(spec.base_cells, spec.degree, spec.max_level)
    records: list[IterationRecord] = []
    parts, fields, inds, marks, sstats = [], [], [], [], []
    status = "max_iter"
    prev_q = None
    for k in range(1, spec.max_iter + 1):
        t0 = time.perf_counter()
        space = constrain_space(build_basis(P), P)
        system = assemble(space, spec.f)
        U = solve(system)
        sstats.append(dict(system.stats))
        ind = estimate(U, spec.f)
        eta2, osc2 = ind.total_eta2, ind.total_osc2
        e2 = energy_norm_error(U, spec.lap_u) ** 2 if spec.has_exact else math.nan
        q = (e2 if spec.has_exact else 0.0) + eta2
        alpha = q / prev_q if prev_q else math.nan
        prev_q = q

        mark = dorfler_mark(ind.as_dict(), spec.theta) if eta2 > 0 else None
        stop = None
        if mark is None or not mark.marked:
            stop = "converged"
        elif math.sqrt(eta2) <= spec.tol:
            stop = "tolerance"
        elif k == spec.max_iter:
            stop = "max_iter"
        newP = None
        if stop is None:
            try:
                newP = mesh_refine(P, mark.marked)
            except LevelCapError as exc:
                log.warning("stopping: %s", exc)
                stop = "level_cap"
        nmarked = len(mark.marked) if (mark is not None and newP is not None) else 0
        rec = IterationRecord(k, len(P), space.dim, eta2, osc2, e2,
                              e2 + osc2 if spec.has_exact else math.nan,
                              nmarked, alpha, 1e3 * (time.perf_counter() - t0))
        records.append(rec)
        parts.append(P)
        fields.append(U if keep_fields else None)
        inds.append(ind)
        marks.append(tuple(mark.marked) if nmarked else ())
        log.info("iter %d: cells %d dof %d eta %.3e", k, len(P), space.dim, math.sqrt(eta2))
        if out is not None:
            write_records(records, out / "iterations.csv")
            (out / f"mesh_{k:04d}.json").write_text(P.to_json())
            if dump_indicators:
                ind.write_csv(out / f"indicators_{k:04d}.csv")
        if stop is not None:
            status = stop
            break
        P = newP
    run = AfemRun(spec, records, parts, fields, inds, marks, status, solver_stats=sstats)
    run.summary = summarize(run)
    if out is not None:
        (out / "summary.json").write_text(json.dumps(_jsonable(run.summary), indent=2))
        (out / "field_final.json").write_text(json.dumps(field_document(fields[-1])))
    return run


def run_uniform(spec: ProblemSpec, levels: int, output: str | Path | None = None) -> AfemRun:
    """Uniform refinement baseline: ``levels`` solves on levels 0..levels-1."""
    out = Path(output) if output is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    P = initial_partition(spec.base_cells, spec.degree, spec.max_level)
    records, parts, fields, inds = [], [], [], []
    prev_q = None
    for k in range(1, levels + 1):
        t0 = time.perf_counter()
        space = constrain_space(build_basis(P), P)
        U = solve(assemble(space, spec.f))
        ind = estimate(U, spec.f)
        e2 = energy_norm_error(U, spec.lap_u) ** 2 if spec.has_exact else math.nan
        q = (e2 if spec.has_exact else 0.0) + ind.total_eta2
        alpha = q / prev_q if prev_q else math.nan
        prev_q = q
        last = k == levels
        rec = IterationRecord(k, len(P), space.dim, ind.total_eta2, ind.total_osc2, e2,
                              e2 + ind.total_osc2 if spec.has_exact else math.nan,
                              0 if last else len(P), alpha, 1e3 * (time.perf_counter() - t0))
        records.append(rec)
        parts.append(P)
        fields.append(U)
        inds.append(ind)
        if out is not None:
            write_records(records, out / "iterations.csv")
            (out / f"mesh_{k:04d}.json").write_text(P.to_json())
        if not last:
            P = refine_uniformly(P)
    run = AfemRun(spec, records, parts, fields, inds, [tuple(p.cells) for p in parts[:-1]] + [()],
                  "uniform")
    run.summary = summarize(run)
    if out is not None:
        (out / "summary.json").write_text(json.dumps(_jsonable(run.summary), indent=2))
        (out / "field_final.json").write_text(json.dumps(field_document(fields[-1])))
    return run


# ---------------------------------------------------------------------------
# diagnostics

@dataclass(frozen=True)
class ContractionReport:
    ratios: dict  # C -> list of step ratios
    max_ratio: dict  # C -> max ratio
    best_C: float
    best_max_ratio: float
    fitted_alpha: float
    start_iter: int


def contraction_diagnostic(records: Sequence[IterationRecord], C: float | Sequence[float] | None = None,
                           start_iter: int = 2) -> ContractionReport | None:
    """Step ratios of e^2 + C eta^2 from ``start_iter`` on, scanned over C.

    Returns ``None`` (diagnostic skipped) with fewer than 3 records or
    without an exact solution.
    """
    if len(records) < 3:
        return None
    e2 = np.array([r.energy_err2 for r in records])
    eta2 = np.array([r.eta2 for r in records])
    if not np.all(np.isfinite(e2)):
        return None
    grid = C_GRID if C is None else tuple(np.atleast_1d(C).astype(float))
    it = np.array([r.iter for r in records])
    sel = it >= start_iter
    ratios, mx = {}, {}
    for c in grid:
        qv = e2 + c * eta2
        qs = qv[sel]
        rr = qs[1:] / qs[:-1] if len(qs) > 1 else np.array([])
        ratios[c] = rr.tolist()
        mx[c] = float(rr.max()) if rr.size else math.nan
    best = min(grid, key=lambda c: (np.inf if math.isnan(mx[c]) else mx[c], c))
    rr = np.array(ratios[best])
    alpha = float(np.exp(np.mean(np.log(rr)))) if rr.size and np.all(rr > 0) else math.nan
    return ContractionReport(ratios, mx, float(best), mx[best], alpha, start_iter)


@dataclass(frozen=True)
class RateFit:
    s: float
    residual: float
    npoints: int


_SELECTORS: dict[str, Callable] = {
    "energy": lambda r: math.sqrt(r.energy_err2) if r.energy_err2 >= 0 else math.nan,
    "eta": lambda r: math.sqrt(r.eta2),
    "total": lambda r: math.sqrt(r.total_err2) if r.total_err2 >= 0 else math.nan,
}


def rate_estimate(records: Sequence[IterationRecord], quantity: str | Callable = "energy",
                  last_fraction: float = 0.5) -> RateFit:
    """Least-squares decay rate s of ``quantity ~ dim^{-s}`` over the last records."""
    if len(records) < 4:
        raise ValueError("need at least 4 records")
    sel = _SELECTORS[quantity] if isinstance(quantity, str) else quantity
    tail = list(records)[int(len(records) * (1 - last_fraction)):]
    q = np.array([sel(r) for r in tail], dtype=float)
    n = np.array([r.ndof for r in tail], dtype=float)
    ok = np.isfinite(q) & (q > 0) & (n > 0)
    if ok.sum() < 3:
        raise ValueError("fewer than 3 positive points for the rate fit")
    x, y = np.log(n[ok]), np.log(q[ok])
    if np.ptp(x) == 0:
        raise ValueError("dimension does not vary over the fitted records")
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return RateFit(float(-coef[0]) + 0.0, resid, int(ok.sum()))


def complexity_lambda(records: Sequence[IterationRecord]) -> float:
    """max_k (#P_k - #P_0) / sum_{l<k} #M_l."""
    n0 = records[0].ncells
    acc, lam = 0, 0.0
    for prev, rec in zip(records[:-1], records[1:]):
        acc += prev.marked
        if acc:
            lam = max(lam, (rec.ncells - n0) / acc)
    return lam


def summarize(run: AfemRun) -> dict:
    recs = run.records
    spec = run.spec
    last = recs[-1]
    B = build_basis(run.partitions[-1])
    out: dict = {
        "problem": spec.name, "degree": spec.degree, "base_cells": spec.base_cells,
        "theta": spec.theta, "tol": spec.tol, "seed": spec.seed, "status": run.status,
        "iterations": len(recs), "final_cells": last.ncells, "final_dof": last.ndof,
        "final_eta": math.sqrt(last.eta2), "levels": run.partitions[-1].nlevels,
        "basis_per_level": B.counts_per_level(),
        "Lambda": complexity_lambda(recs),
        "marked_total": int(sum(r.marked for r in recs)),
        "solver": run.solver_stats[-1] if run.solver_stats else None,
        "max_solver_residual": max((s.get("residual", 0.0) for s in run.solver_stats), default=None),
    }
    if spec.has_exact:
        out["final_energy_error"] = math.sqrt(last.energy_err2)
    rates = {}
    for name in ("energy", "eta", "total"):
        try:
            rf = rate_estimate(recs, name)
            rates[name] = {"s": rf.s, "residual": rf.residual, "points": rf.npoints}
        except (ValueError, KeyError):
            rates[name] = None
    out["rates"] = rates
    cd = contraction_diagnostic(recs)
    out["contraction"] = None if cd is None else {
        "best_C": cd.best_C, "max_ratio": cd.best_max_ratio, "fitted_alpha": cd.fitted_alpha,
        "max_ratio_by_C": {f"{c:g}": v for c, v in cd.max_ratio.items()},
        "start_iter": cd.start_iter}
    if spec.has_exact:
        eff = [math.sqrt(r.eta2 / r.energy_err2) for r in recs[1:]
               if r.energy_err2 > 0]
        out["effectivity"] = ({"min": min(eff), "max": max(eff), "spread": max(eff) / min(eff),
                               "series": eff} if eff else None)
        ceff = [(r.energy_err2 + r.osc2) / r.eta2 for r in recs if r.eta2 > 0]
        out["efficiency_constant"] = {"min": min(ceff), "series": ceff} if ceff else None
        out["marked_cardinality"] = _cardinality_trend(recs, rates.get("total"))
        out["optimal_marking_floor"] = _marking_floor(run)
    return out


def _cardinality_trend(recs, rate) -> dict | None:
    if not rate or rate["s"] <= 0:
        return None
    s = rate["s"]
    vals = [r.marked * math.sqrt(r.total_err2) ** (1.0 / s) for r in recs if r.marked > 0]
    if not vals:
        return None
    med = float(np.median(vals))
    return {"series": vals, "max_over_median": max(vals) / med if med > 0 else math.inf}


def _marking_floor(run: AfemRun) -> float | None:
    """min over contracting steps of eta^2(U, omega_R) / eta^2(U, Omega)."""
    shares = []
    recs = run.records
    for k in range(len(recs) - 1):
        if not recs[k + 1].total_err2 < recs[k].total_err2:
            continue
        P, Pn = run.partitions[k], run.partitions[k + 1]
        B = build_basis(P)
        refined = [c for c in B.cells if c not in Pn.cells]
        if not refined:
            continue
        ids = B.cell_ids(refined)
        patch = np.unique(B.patch[ids].indices)
        eta2 = run.indicators[k].eta2
        shares.append(float(eta2[patch].sum() / eta2.sum()))
    return min(shares) if shares else None


def discrete_reliability(run: AfemRun) -> list[float]:
    """|||U_{k+1} - U_k|||^2 / eta^2(U_k, omega_R) for each refinement step."""
    out = []
    for k in range(len(run.records) - 1):
        U, Un = run.fields[k], run.fields[k + 1]
        if U is None or Un is None:
            continue
        B = U.basis
        refined = [c for c in B.cells if c not in run.partitions[k + 1].cells]
        if not refined:
            continue
        ids = B.cell_ids(refined)
        patch = np.unique(B.patch[ids].indices)
        denom = run.indicators[k].eta2[patch].sum()
        if denom > 0:
            out.append(energy_distance(Un, U) ** 2 / denom)
    return out


def threshold_refine(e: Callable, eps: float, P0: HierPartition,
                     max_iter: int = 200) -> HierPartition:
    """Refine every cell with e(tau, P) > eps until none remains.

    Returns the final admissible partition; the bound
    sum_tau e(tau, P)^2 <= #P eps^2 is checked on exit.
    """
    P = P0
    for _ in range(max_iter):
        vals = {c: float(e(c, P)) for c in P.sorted_cells}
        marked = [c for c, v in vals.items() if v > eps]
        if not marked:
            total = sum(v * v for v in vals.values())
            if total > len(P) * eps**2 * (1 + 1e-12):  # pragma: no cover - implied by the loop
                raise AssertionError("thresholding bound violated")
            return P
        P = mesh_refine(P, marked)
    raise RuntimeError(f"thresholding did not terminate within {max_iter} sweeps "
                       "(is e contractive under refinement?)")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, np.integer):
        return int(x)
    return x
