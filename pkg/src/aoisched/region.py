"""Achievable AoI region: importance-weight sweeps and the S / F operating points."""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AoiSchedError, InvalidRequestError
from .mdp import DEFAULT_STATE_CAP, MdpModel, build_model
from .model import SystemConfig
from .solver import Policy, evaluate_policy, solve

log = logging.getLogger(__name__)


@dataclass(eq=False)
class RegionPoint:
    weights: np.ndarray
    avg_aoi: np.ndarray | None
    gain: float
    label: str = ""
    objective: str = "aoi"
    method: str = "pi"
    error: str | None = None
    policy: Policy | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.error is None and self.avg_aoi is not None

    @property
    def sum_aoi(self) -> float:
        return float(np.sum(self.avg_aoi))

    @property
    def max_aoi(self) -> float:
        return float(np.max(self.avg_aoi))

    @property
    def gap(self) -> float:
        """Spread between the largest and smallest per-device average age."""
        return float(np.max(self.avg_aoi) - np.min(self.avg_aoi))

    def row(self) -> list:
        aoi = list(self.avg_aoi) if self.avg_aoi is not None else [float("nan")] * len(self.weights)
        return [float(w) for w in self.weights] + [float(a) for a in aoi] + [float(self.gain), self.label]


def region_header(K: int) -> list[str]:
    return [f"w_{i}" for i in range(1, K + 1)] + [f"aoi_{i}" for i in range(1, K + 1)] + ["gain", "label"]


def simplex_grid(K: int, m: int) -> list[np.ndarray]:
    """Uniform simplex grid with ``m`` points per axis, ordered by w_1, w_2, ... ascending."""
    if m < 2:
        raise InvalidRequestError("grid resolution must be at least 2")
    if K == 1:
        return [np.ones(1)]
    n = m - 1
    pts = []
    for head in itertools.product(range(n + 1), repeat=K - 1):
        if sum(head) <= n:
            pts.append(np.array(list(head) + [n - sum(head)], dtype=float) / n)
    return pts


def _as_model(system, state_cap=DEFAULT_STATE_CAP) -> MdpModel:
    if isinstance(system, MdpModel):
        return system
    if isinstance(system, SystemConfig):
        return build_model(system, state_cap=state_cap)
    raise TypeError("expected a SystemConfig or MdpModel")


def solve_point(model: MdpModel, weights, method: str = "pi", label: str = "") -> RegionPoint:
    w = np.asarray(weights, dtype=float)
    try:
        res = solve(model, "aoi", w, method=method)
        ev = evaluate_policy(model, res.policy, w)
    except AoiSchedError as exc:
        log.warning("weights %s failed: %s", w, exc)
        return RegionPoint(w, None, float("nan"), label, method=method, error=str(exc))
    return RegionPoint(w, ev.avg_aoi, float(res.gain), label, method=method, policy=res.policy)


def _solve_many(model, weight_list, method, threads) -> list[RegionPoint]:
    if threads is None or threads <= 1 or len(weight_list) <= 1:
        return [solve_point(model, w, method) for w in weight_list]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda w: solve_point(model, w, method), weight_list))


def sweep_weights(system, m: int = 21, method: str = "pi", threads: int = 1) -> list[RegionPoint]:
    """Optimal per-device average ages for every weight vector on the simplex grid."""
    model = _as_model(system)
    return _solve_many(model, simplex_grid(model.K, m), method, threads)


def _vectors(points) -> np.ndarray:
    return np.array([p.avg_aoi if isinstance(p, RegionPoint) else p for p in points], dtype=float)


def pareto_mask(vectors: np.ndarray) -> np.ndarray:
    """Points not dominated (<= everywhere, < somewhere) by another point."""
    v = np.asarray(vectors, dtype=float)
    le = np.all(v[:, None, :] <= v[None, :, :], axis=2)  # le[j, i]: j <= i
    lt = np.any(v[:, None, :] < v[None, :, :], axis=2)
    dominated = np.any(le & lt, axis=0)
    return ~dominated


def pareto_frontier(points: Sequence) -> list:
    """Non-dominated subset in input order (failed RegionPoints are skipped)."""
    pts = [p for p in points if not isinstance(p, RegionPoint) or p.ok]
    if not pts:
        return []
    mask = pareto_mask(_vectors(pts))
    return [p for p, keep in zip(pts, mask) if keep]


def sum_aoi_point(system, method: str = "pi") -> RegionPoint:
    """Equal-weight optimum (operating point S)."""
    model = _as_model(system)
    return solve_point(model, np.full(model.K, 1.0 / model.K), method, label="S")


def _better(a: RegionPoint, b: RegionPoint | None, tol: float = 1e-12) -> bool:
    if b is None:
        return True
    if a.max_aoi < b.max_aoi - tol:
        return True
    return abs(a.max_aoi - b.max_aoi) <= tol and a.gap < b.gap - tol


def min_max_point(system, m: int = 21, refine: int = 3, method: str = "pi", sweep: list[RegionPoint] | None = None,
                  threads: int = 1) -> RegionPoint:
    """Weight vector minimizing the largest per-device average age (operating point F).

    Coarse simplex grid search followed by ``refine`` rounds that probe the
    incumbent shifted by half the current cell along every pair of axes.
    """
    if m < 3:
        raise InvalidRequestError("min-max search needs a grid resolution of at least 3")
    model = _as_model(system)
    K = model.K
    if K == 1:
        pt = sum_aoi_point(model, method)
        pt.label = "F"
        return pt
    coarse = sweep if sweep is not None else sweep_weights(model, m, method, threads)
    seen = {tuple(np.round(p.weights, 12)): p for p in coarse}
    best = None
    for p in coarse:
        if p.ok and _better(p, best):
            best = p
    if best is None:
        raise AoiSchedError("every coarse grid point failed")
    step = 1.0 / (m - 1)
    for _ in range(refine):
        step /= 2.0
        cands = []
        for i, j in itertools.permutations(range(K), 2):
            w = best.weights.copy()
            w[i] += step
            w[j] -= step
            if w[j] < -1e-12:
                continue
            w = np.clip(w, 0.0, None)
            w /= w.sum()
            key = tuple(np.round(w, 12))
            if key not in seen:
                cands.append(w)
        for p in _solve_many(model, cands, method, threads):
            seen[tuple(np.round(p.weights, 12))] = p
            if p.ok and _better(p, best):
                best = p
    out = RegionPoint(best.weights.copy(), best.avg_aoi.copy(), best.gain, "F", best.objective, best.method,
                      policy=best.policy)
    return out


@dataclass
class RegionResult:
    sweep: list[RegionPoint]
    frontier: list[RegionPoint]
    S: RegionPoint
    F: RegionPoint

    def labeled_sweep(self) -> list[RegionPoint]:
        """Sweep rows with exactly one ``S`` and one ``F`` label.

        ``S`` marks the grid row at equal weights (or the row of least sum
        when equal weights are off-grid); ``F`` marks the grid row of
        least maximum age, the start of the refinement.
        """
        rows = [RegionPoint(p.weights, p.avg_aoi, p.gain, "", p.objective, p.method, p.error) for p in self.sweep]
        ok = [i for i, p in enumerate(rows) if p.ok]
        if not ok:
            return rows
        s_idx = next((i for i in ok if np.allclose(rows[i].weights, self.S.weights)), None)
        if s_idx is None:
            s_idx = min(ok, key=lambda i: rows[i].sum_aoi)
        f_idx = next((i for i in ok if np.allclose(rows[i].weights, self.F.weights)), None)
        if f_idx is None:
            f_idx = ok[0]
            for i in ok:
                if _better(rows[i], rows[f_idx]):
                    f_idx = i
        rows[s_idx].label = "S"
        rows[f_idx].label = "S+F" if f_idx == s_idx else "F"
        return rows


def characterize_region(system, m: int = 21, refine: int = 3, method: str = "pi", threads: int = 1) -> RegionResult:
    model = _as_model(system)
    sweep = sweep_weights(model, m, method, threads)
    S = sum_aoi_point(model, method)
    F = min_max_point(model, m, refine, method, sweep=sweep, threads=threads)
    return RegionResult(sweep, pareto_frontier(sweep), S, F)
