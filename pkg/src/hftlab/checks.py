"""Hellmann-Feynman identities measured as residuals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.stats import unitary_group

from .dsl import (
    ModelDefinition,
    evaluate_derivative,
    evaluate_matrix,
    evaluate_second_derivative,
)
from .oracle import (
    FDConfig,
    adapted_basis,
    branch_slopes_with_notes,
    fd_eigenvector_derivative,
)
from .spectral import (
    DegeneracyPartition,
    SpectralDecomposition,
    cluster_degeneracies,
    default_tol_deg,
    eigendecompose,
    max_norm,
)

__all__ = [
    "ResidualReport",
    "DegeneratePointError",
    "random_unitary",
    "check_diagonal_hft",
    "check_unitary_mix",
    "check_sum_rule",
    "check_offdiag_hft",
    "check_hypervirial",
]


class DegeneratePointError(ValueError):
    pass


@dataclass(frozen=True)
class ResidualReport:
    """One measured identity. ``verdict`` is derived, never stored."""

    name: str
    lam: float
    residual: float
    tolerance: float
    lhs: Any = None
    rhs: Any = None
    notes: tuple[str, ...] = ()
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.tolerance)

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        finite = math.isfinite(self.residual)
        return {
            "name": self.name,
            "lambda": float(self.lam),
            "residual": float(self.residual) if finite else None,
            "tolerance": float(self.tolerance),
            "verdict": self.verdict,
            "notes": list(self.notes),
        }

    def __str__(self) -> str:
        line = (
            f"{self.verdict.upper():4s} {self.name:<24s} lambda={self.lam:+.6g} "
            f"residual={self.residual:.3e} tol={self.tolerance:.1e}"
        )
        return "\n".join([line] + [f"     - {n}" for n in self.notes])


def random_unitary(g: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random ``g x g`` unitary."""
    if g == 1:
        return np.exp(2j * np.pi * rng.random()) * np.ones((1, 1))
    return unitary_group.rvs(g, random_state=rng)


def _offdiag_within(M: np.ndarray, p: DegeneracyPartition) -> float:
    worst = 0.0
    for c in p.degenerate:
        block = M[c.start : c.stop, c.start : c.stop]
        off = block - np.diag(np.diag(block))
        worst = max(worst, max_norm(off))
    return worst


def _find_cluster(p: DegeneracyPartition, cluster) -> range:
    cluster = range(cluster.start, cluster.stop) if isinstance(cluster, range) else range(*cluster)
    if cluster not in p.clusters:
        raise ValueError(
            f"index range {list(cluster)} is not a degeneracy cluster at this lambda "
            f"(clusters: {[list(c) for c in p.clusters]})"
        )
    return cluster


def check_diagonal_hft(
    m: ModelDefinition,
    lam: float,
    h: float | None = None,
    tol: float | None = None,
    tol_deg: float | None = None,
    start: SpectralDecomposition | None = None,
) -> ResidualReport:
    """Diagonal HFT including degenerate levels.

    In the dH-adapted basis ``<chi_i|dH|chi_i>`` must equal the branch slope
    from finite differences, and ``dH`` must be diagonal inside each cluster.
    The default tolerance is ``max(1e-6, 10 h^2 |H''|_max)``.
    """
    cfg = FDConfig(h)
    basis = adapted_basis(m, lam, tol_deg, start)
    M = basis.decomposition.project(basis.dH)
    diagonal = np.real(np.diag(M))
    slopes, fd_notes = branch_slopes_with_notes(
        m, lam, cfg, basis.decomposition, tol_deg
    )
    diag_res = float(np.max(np.abs(diagonal - slopes)))
    off = _offdiag_within(M, basis.partition)
    if tol is None:
        step = cfg.step_at(lam)
        curvature = max_norm(evaluate_second_derivative(m, "H", lam))
        tol = max(1e-6, 10 * step**2 * curvature)
    return ResidualReport(
        "diagonal_hft",
        lam,
        max(diag_res, off),
        tol,
        lhs=diagonal,
        rhs=slopes,
        notes=basis.notes + tuple(fd_notes),
        extras={
            "diagonal_residual": diag_res,
            "offdiag_within_clusters": off,
            "clusters": basis.partition.sizes,
        },
    )


def check_unitary_mix(
    m: ModelDefinition,
    lam: float,
    U,
    cluster,
    tol: float = 1e-8,
    h: float | None = None,
    tol_deg: float | None = None,
) -> ResidualReport:
    """Matrix of dH in a mixed degenerate basis ``chi = psi @ U``.

    lhs is ``chi^H dH chi``; rhs is ``U^H diag(dE_k) U`` with the branch slopes
    taken from finite differences.
    """
    U = np.asarray(U, dtype=complex)
    g = U.shape[0]
    if U.shape != (g, g) or max_norm(U.conj().T @ U - np.eye(g)) > 1e-12:
        raise ValueError("U is not unitary to within 1e-12")
    basis = adapted_basis(m, lam, tol_deg)
    c = _find_cluster(basis.partition, cluster)
    if len(c) != g:
        raise ValueError(f"U is {g}x{g} but the cluster has {len(c)} levels")
    psi = basis.decomposition.eigenvectors[:, c.start : c.stop]
    chi = psi @ U
    lhs = chi.conj().T @ basis.dH @ chi
    slopes, notes = branch_slopes_with_notes(m, lam, FDConfig(h), basis.decomposition, tol_deg)
    rhs = U.conj().T @ np.diag(slopes[c.start : c.stop]) @ U
    return ResidualReport(
        "unitary_mix", lam, max_norm(lhs - rhs), tol, lhs=lhs, rhs=rhs,
        notes=basis.notes + tuple(notes),
    )


def check_sum_rule(
    m: ModelDefinition,
    lam: float,
    cluster,
    trials: int = 100,
    seed: int = 0,
    tol: float = 1e-6,
    h: float | None = None,
    tol_deg: float | None = None,
) -> ResidualReport:
    """Trace of dH over a cluster: invariant under mixing and equal to the slope sum.

    The residual is the larger of the spread across ``trials`` random unitary
    mixes and the deviation from the summed FD slopes; both are kept in
    ``extras``.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    basis = adapted_basis(m, lam, tol_deg)
    c = _find_cluster(basis.partition, cluster)
    psi = basis.decomposition.eigenvectors[:, c.start : c.stop]
    rng = np.random.default_rng(seed)
    traces = []
    for _ in range(trials):
        chi = psi @ random_unitary(len(c), rng)
        traces.append(float(np.real(np.trace(chi.conj().T @ basis.dH @ chi))))
    traces = np.asarray(traces)
    slopes, notes = branch_slopes_with_notes(m, lam, FDConfig(h), basis.decomposition, tol_deg)
    slope_sum = float(np.sum(slopes[c.start : c.stop]))
    spread = float(traces.max() - traces.min())
    deviation = float(np.max(np.abs(traces - slope_sum)))
    return ResidualReport(
        "sum_rule",
        lam,
        max(spread, deviation),
        tol,
        lhs=float(traces.mean()),
        rhs=slope_sum,
        notes=basis.notes + tuple(notes),
        extras={"spread": spread, "deviation": deviation, "trials": trials, "g": len(c)},
    )


def check_offdiag_hft(
    m: ModelDefinition,
    lam: float,
    h: float | None = None,
    tol: float = 1e-5,
    tol_deg: float | None = None,
    reference: SpectralDecomposition | None = None,
) -> ResidualReport:
    """Full matrix form ``<n|dH|m> = (E_m - E_n)<n|d m> + dE_m delta_nm`` away from degeneracies."""
    H = evaluate_matrix(m, "H", lam)
    dH = evaluate_derivative(m, "H", lam)
    d = reference if reference is not None else eigendecompose(H, lam)
    p = cluster_degeneracies(d, tol_deg or default_tol_deg(H))
    if p.degenerate:
        raise DegeneratePointError(
            f"lambda={lam!r} is a degeneracy point; the eigenvector derivative is not "
            "defined there, use check_diagonal_hft instead"
        )
    cfg = FDConfig(h)
    dpsi = fd_eigenvector_derivative(m, lam, cfg, d)
    overlaps = d.eigenvectors.conj().T @ dpsi
    slopes, notes = branch_slopes_with_notes(m, lam, cfg, d, tol_deg)
    E = d.eigenvalues
    lhs = d.project(dH)
    rhs = (E[None, :] - E[:, None]) * overlaps + np.diag(slopes)
    return ResidualReport(
        "offdiag_hft", lam, max_norm(lhs - rhs), tol, lhs=lhs, rhs=rhs, notes=tuple(notes)
    )


def check_hypervirial(
    H,
    W,
    d: SpectralDecomposition,
    p: DegeneracyPartition,
    tol_num: float | None = None,
) -> ResidualReport:
    """Off-cluster matrix elements of W bounded by the measured commutator.

    For levels in different clusters, ``|E_i - E_j| |W_ij| = |[H, W]_ij|``,
    and the basis-transformed commutator element is at most ``n |[H,W]|_max``.
    The residual is ``max |E_i - E_j| |W_ij|`` over off-cluster pairs.
    """
    H = np.asarray(H, dtype=complex)
    W = np.asarray(W, dtype=complex)
    n = H.shape[0]
    c = max_norm(H @ W - W @ H)
    if tol_num is None:
        tol_num = 1e-10 * max(1.0, max_norm(W)) * max(1.0, max_norm(H))
    Wb = d.project(W)
    labels = p.labels()
    cross = labels[:, None] != labels[None, :]
    gaps = np.abs(d.eigenvalues[:, None] - d.eigenvalues[None, :])
    if cross.any():
        residual = float(np.max(gaps[cross] * np.abs(Wb[cross])))
        max_off = float(np.max(np.abs(Wb[cross])))
    else:
        residual = max_off = 0.0
    notes = ()
    if c > tol_num:
        notes = (f"W does not commute with H: |[H,W]|_max = {c:.3e}",)
    return ResidualReport(
        "hypervirial",
        d.lam if d.lam is not None else math.nan,
        residual,
        n * c + tol_num,
        lhs=max_off,
        rhs=0.0,
        notes=notes,
        extras={"commutator": c, "max_offcluster": max_off, "norm_W": max_norm(W)},
    )

