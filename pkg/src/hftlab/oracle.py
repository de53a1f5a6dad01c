"""Finite-difference oracles.

These never use the symbolic derivative of ``H``: slopes come from
eigenvalues at ``lambda +- h`` tracked along branches, so they are an
independent route to every quantity the checks compare against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .dsl import ModelDefinition, evaluate_derivative, evaluate_matrix
from .spectral import (
    DegeneracyPartition,
    SpectralDecomposition,
    align_continuation,
    cluster_degeneracies,
    default_tol_deg,
    eigendecompose,
    is_unreliable,
    max_norm,
    rotate_within_clusters,
)

__all__ = [
    "OracleError",
    "FDConfig",
    "AdaptedBasis",
    "adapted_basis",
    "fd_scalar",
    "fd_branch_slopes",
    "fd_rayleigh_slopes",
    "fd_eigenvector_derivative",
]

GAP_SAFETY = 100.0


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class FDConfig:
    """Central-difference settings; ``step=None`` means ``1e-5 * max(1, |lambda|)``."""

    step: float | None = None
    richardson: bool = True

    def __post_init__(self):
        if self.step is not None and not self.step > 0:
            raise ValueError("finite-difference step must be positive")

    def step_at(self, lam: float) -> float:
        return self.step if self.step is not None else 1e-5 * max(1.0, abs(lam))

    def with_step(self, step: float) -> FDConfig:
        return FDConfig(step, self.richardson)

    def steps(self, lam: float) -> tuple[float, ...]:
        h = self.step_at(lam)
        return (h, h / 2) if self.richardson else (h,)


def _combine(estimates):
    if len(estimates) == 1:
        return estimates[0]
    coarse, fine = estimates
    return (4 * fine - coarse) / 3


def fd_scalar(fn: Callable[[float], float], lam: float, cfg: FDConfig = FDConfig()):
    """Central difference of ``fn`` at ``lam``, Richardson-combined over ``h, h/2``.

    ``fn`` may return an array; the derivative is taken elementwise.
    """
    estimates = []
    for h in cfg.steps(lam):
        try:
            up, down = fn(lam + h), fn(lam - h)
        except Exception as exc:
            raise OracleError(f"evaluation failed in FD stencil around {lam!r}: {exc}") from exc
        estimates.append((np.asarray(up) - np.asarray(down)) / (2 * h))
    out = _combine(estimates)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class AdaptedBasis:
    """Eigenbasis at one lambda with degenerate clusters rotated to diagonalize dH."""

    lam: float
    H: NDArray[np.complex128]
    dH: NDArray[np.complex128]
    decomposition: SpectralDecomposition
    partition: DegeneracyPartition

    @property
    def notes(self) -> tuple[str, ...]:
        return self.decomposition.notes

    @property
    def hft_diagonal(self) -> NDArray[np.float64]:
        """``<chi_n| dH |chi_n>`` for every basis vector."""
        return np.real(np.diag(self.decomposition.project(self.dH)))


def adapted_basis(
    m: ModelDefinition,
    lam: float,
    tol_deg: float | None = None,
    start: SpectralDecomposition | None = None,
) -> AdaptedBasis:
    """Decompose ``H(lam)`` and rotate each degenerate cluster by ``dH(lam)``.

    ``start`` replaces the decomposition of ``H(lam)`` (e.g. a deliberately
    scrambled basis); its eigenvalues must be ascending.
    """
    H = evaluate_matrix(m, "H", lam)
    dH = evaluate_derivative(m, "H", lam)
    d = start if start is not None else eigendecompose(H, lam)
    if tol_deg is None:
        tol_deg = default_tol_deg(H)
    p = cluster_degeneracies(d, tol_deg)
    return AdaptedBasis(lam, H, dH, rotate_within_clusters(d, dH, p), p)


def _aligned_pair(m, lam, h, reference, tol_deg):
    out = []
    for x in (lam - h, lam + h):
        H = evaluate_matrix(m, "H", x)
        out.append(align_continuation(reference, eigendecompose(H, x), tol_deg))
    return out


def _crossing_notes(reference: DegeneracyPartition | None, minus, plus) -> list[str]:
    if reference is None:
        return []
    labels = reference.labels()
    # perm[k] is the ascending-order index of branch k on each side
    rank_m, rank_p = np.asarray(minus.perm), np.asarray(plus.perm)
    n = len(labels)
    for k in range(n):
        for l in range(k + 1, n):
            if labels[k] != labels[l] and (rank_m[k] - rank_m[l]) * (rank_p[k] - rank_p[l]) < 0:
                return [
                    f"branch order changes inside the FD stencil (levels {k + 1},{l + 1}); "
                    "a crossing lies within [lambda-h, lambda+h]"
                ]
    return []


def branch_stencil(
    m: ModelDefinition,
    lam: float,
    cfg: FDConfig,
    reference: SpectralDecomposition,
    tol_deg: float | None = None,
    partition: DegeneracyPartition | None = None,
):
    """Aligned decompositions at ``lam +- h`` for each Richardson step.

    Retries once with ``h/10`` if continuation is unreliable.

    Returns:
        (steps, pairs, notes) where ``pairs[k] = (minus, plus)`` for ``steps[k]``.
    """
    for attempt, c in enumerate((cfg, cfg.with_step(cfg.step_at(lam) / 10))):
        steps = c.steps(lam)
        pairs = [_aligned_pair(m, lam, h, reference, tol_deg) for h in steps]
        if not any(is_unreliable(d) for pair in pairs for d in pair):
            notes = []
            if attempt:
                notes.append(f"FD step shrunk to {steps[0]:.3g} for reliable continuation")
            notes += _crossing_notes(partition, *pairs[0])
            return steps, pairs, notes
    raise OracleError(
        f"eigenbasis continuation unreliable at lambda={lam!r} even with step {steps[0]:.3g}"
    )


def fd_branch_slopes(
    m: ModelDefinition,
    lam: float,
    cfg: FDConfig = FDConfig(),
    reference: SpectralDecomposition | None = None,
    tol_deg: float | None = None,
) -> NDArray[np.float64]:
    """Slopes ``dE/dlambda`` of the branches through ``reference`` (default: adapted basis).

    Eigenvalues at ``lambda +- h`` are matched to the reference by eigenvector
    overlap, never by ascending order, so branches keep their identity through
    a crossing.
    """
    slopes, _ = branch_slopes_with_notes(m, lam, cfg, reference, tol_deg)
    return slopes


def branch_slopes_with_notes(m, lam, cfg=FDConfig(), reference=None, tol_deg=None):
    partition = None
    if reference is None:
        basis = adapted_basis(m, lam, tol_deg)
        reference, partition = basis.decomposition, basis.partition
    steps, pairs, notes = branch_stencil(m, lam, cfg, reference, tol_deg, partition)
    estimates = [(plus.eigenvalues - minus.eigenvalues) / (2 * h) for h, (minus, plus) in zip(steps, pairs)]
    return _combine(estimates), notes


def fd_rayleigh_slopes(
    m: ModelDefinition,
    name: str,
    lam: float,
    cfg: FDConfig = FDConfig(),
    reference: SpectralDecomposition | None = None,
    tol_deg: float | None = None,
) -> NDArray[np.float64]:
    """Slopes of ``<psi_n|X|psi_n>`` for matrix ``name`` along continued eigenvectors of H."""
    if reference is None:
        reference = adapted_basis(m, lam, tol_deg).decomposition
    steps, pairs, _ = branch_stencil(m, lam, cfg, reference, tol_deg)
    estimates = []
    for h, (minus, plus) in zip(steps, pairs):
        a_minus = np.real(np.diag(minus.project(evaluate_matrix(m, name, lam - h))))
        a_plus = np.real(np.diag(plus.project(evaluate_matrix(m, name, lam + h))))
        estimates.append((a_plus - a_minus) / (2 * h))
    return _combine(estimates)


def fd_eigenvector_derivative(
    m: ModelDefinition,
    lam: float,
    cfg: FDConfig = FDConfig(),
    reference: SpectralDecomposition | None = None,
) -> NDArray[np.complex128]:
    """Columnwise central difference of gauge-aligned eigenvectors.

    Column ``k`` approximates the derivative of ``reference`` column ``k``. The
    gauge makes ``<psi(lambda)|psi(lambda')>`` real and positive.

    Raises:
        OracleError: if two levels are closer than ``100 * h * |dH|_max``.
    """
    H = evaluate_matrix(m, "H", lam)
    if reference is None:
        reference = eigendecompose(H, lam)
    h = cfg.step_at(lam)
    dH = evaluate_derivative(m, "H", lam)
    E = np.sort(reference.eigenvalues)
    gap = float(np.min(np.diff(E))) if len(E) > 1 else np.inf
    if gap <= GAP_SAFETY * h * max_norm(dH):
        raise OracleError(
            f"level gap {gap:.3g} at lambda={lam!r} is too small for eigenvector "
            "finite differences; use the degenerate-point checks instead"
        )
    estimates = []
    for step in cfg.steps(lam):
        minus, plus = _aligned_pair(m, lam, step, reference, None)
        if is_unreliable(minus) or is_unreliable(plus):
            raise OracleError(f"eigenbasis continuation unreliable at lambda={lam!r}")
        estimates.append((plus.eigenvectors - minus.eigenvectors) / (2 * step))
    return _combine(estimates)
