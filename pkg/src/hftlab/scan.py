"""Locating degeneracy points on a lambda grid."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dsl import ModelDefinition, evaluate_matrix
from .spectral import cluster_degeneracies, default_tol_deg, eigendecompose

__all__ = ["DegeneracyPoint", "ScanResult", "golden_section", "scan_degeneracies", "lambda_grid"]

INV_PHI = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class DegeneracyPoint:
    lambda0: float
    g: int
    min_gap: float
    bracket: tuple[float, float]
    cluster: range


@dataclass(frozen=True)
class ScanResult:
    points: tuple[DegeneracyPoint, ...]
    tol_deg: float
    baseline: int

    @property
    def lambdas(self) -> list[float]:
        return [p.lambda0 for p in self.points]


def lambda_grid(start: float, stop: float, count: int) -> np.ndarray:
    if count < 1:
        raise ValueError("grid count must be at least 1")
    if start > stop:
        raise ValueError("grid start must not exceed stop")
    return np.linspace(start, stop, count)


def golden_section(f: Callable[[float], float], a: float, b: float, tol: float = 1e-12):
    """Minimize ``f`` on ``[a, b]`` by golden-section search.

    Returns the best ``(x, f(x))`` seen, endpoints included. The search stops
    when the bracket is narrower than ``tol``.
    """
    a, b = min(a, b), max(a, b)
    best = min(((a, f(a)), (b, f(b))), key=lambda t: t[1])
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
        for pt in ((c, fc), (d, fd)):
            if pt[1] < best[1]:
                best = pt
    return best


def _gaps(m: ModelDefinition, lam: float) -> np.ndarray:
    E = np.linalg.eigvalsh(evaluate_matrix(m, "H", lam))
    return np.sort(np.diff(E))


def scan_degeneracies(
    m: ModelDefinition, grid, tol_deg: float | None = None, lam_tol: float = 1e-12
) -> ScanResult:
    """Find parameter values where the degeneracy count rises.

    Adjacent-level gaps that stay below ``tol_deg`` across the whole grid are
    persistent degeneracies and are not points of interest. With ``p`` such
    gaps, the objective is the ``(p+1)``-th smallest adjacent gap; each local
    minimum on the grid is refined by golden-section search over its bracket
    and kept if the refined gap is at most ``tol_deg``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size < 3:
        raise ValueError("scan needs at least 3 grid points")
    if m.dimension < 2:
        return ScanResult((), tol_deg or 0.0, 0)
    Hs = [evaluate_matrix(m, "H", x) for x in grid]
    if tol_deg is None:
        tol_deg = max(default_tol_deg(H) for H in Hs)
    gaps = [np.sort(np.diff(np.linalg.eigvalsh(H))) for H in Hs]
    baseline = min(int(np.sum(g <= tol_deg)) for g in gaps)
    if baseline >= m.dimension - 1:
        return ScanResult((), tol_deg, baseline)

    def objective(x: float) -> float:
        return float(_gaps(m, x)[baseline])

    q = np.array([g[baseline] for g in gaps])
    n = len(grid)
    points: list[DegeneracyPoint] = []
    for i in range(n):
        left = q[i - 1] if i > 0 else np.inf
        right = q[i + 1] if i < n - 1 else np.inf
        if not (q[i] <= left and q[i] <= right):
            continue
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, n - 1)]
        x, value = golden_section(objective, a, b, lam_tol)
        if q[i] <= value:
            x, value = float(grid[i]), float(q[i])
        if value > tol_deg:
            continue
        if any(abs(x - p.lambda0) <= 1e3 * lam_tol * max(1.0, abs(x)) for p in points):
            continue
        d = eigendecompose(evaluate_matrix(m, "H", x), x)
        part = cluster_degeneracies(d, tol_deg)
        cluster = max(part.clusters, key=len)
        points.append(DegeneracyPoint(float(x), len(cluster), float(value), (float(a), float(b)), cluster))
    return ScanResult(tuple(points), tol_deg, baseline)
