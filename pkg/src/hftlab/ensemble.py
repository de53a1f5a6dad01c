"""Trace identities for statistical averages and the canonical free energy.

Every identity is evaluated along three routes where possible:

* ``direct``: a full-matrix trace that never diagonalizes anything,
* ``spectral``: an eigenvalue sum in the dH-adapted eigenbasis,
* ``oracle``: a finite difference of a scalar whose derivative is the trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .checks import ResidualReport
from .dsl import ModelDefinition, evaluate_derivative, evaluate_matrix
from .oracle import (
    FDConfig,
    OracleError,
    adapted_basis,
    branch_slopes_with_notes,
    fd_rayleigh_slopes,
    fd_scalar,
)
from .spectral import MatrixFunctionSpec, max_norm

__all__ = [
    "CommutationError",
    "TraceComparison",
    "trace_weighted_derivative",
    "lemma1_trace",
    "free_energy",
    "free_energy_derivative",
    "observable_trace_derivative",
]


_TINY = 1e-300


class CommutationError(ValueError):
    pass


@dataclass(frozen=True)
class TraceComparison:
    """Values in units of ``exp(log_scale)``; tolerances are absolute in the same units.

    ``condition_residual`` is set by checks whose identity additionally
    requires a structural condition (diagonality inside degenerate clusters).
    """

    lam: float
    direct: float
    spectral: float
    oracle: float | None
    tolerance: float
    oracle_tolerance: float
    log_scale: float = 0.0
    condition_residual: float | None = None
    condition_tolerance: float | None = None
    notes: tuple[str, ...] = ()

    @property
    def residual(self) -> float:
        return abs(self.direct - self.spectral)

    @property
    def oracle_residual(self) -> float | None:
        if self.oracle is None:
            return None
        return max(abs(self.spectral - self.oracle), abs(self.direct - self.oracle))

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports("trace"))

    def absolute(self, value: float) -> float:
        return value * math.exp(self.log_scale)

    def reports(self, name: str) -> list[ResidualReport]:
        notes = self.notes
        out = [
            ResidualReport(
                name, self.lam, self.residual, self.tolerance, self.direct, self.spectral, notes
            )
        ]
        if self.oracle is not None:
            out.append(
                ResidualReport(
                    f"{name}_oracle", self.lam, self.oracle_residual, self.oracle_tolerance,
                    self.spectral, self.oracle, notes,
                )
            )
        if self.condition_residual is not None:
            out.append(
                ResidualReport(
                    f"{name}_condition", self.lam, self.condition_residual,
                    self.condition_tolerance, notes=notes,
                )
            )
        return out


def _eigvals(m, lam):
    return np.linalg.eigvalsh(evaluate_matrix(m, "H", lam))


def _commutator_note(H, W, label="W"):
    c = max_norm(H @ W - W @ H)
    scale = 1e-10 * max(1.0, max_norm(H)) * max(1.0, max_norm(W))
    if c > scale:
        return (f"{label} does not commute with H (|[H,{label}]|_max = {c:.3e}); identity not expected",)
    return ()


def trace_weighted_derivative(
    m: ModelDefinition,
    lam: float,
    W,
    h: float | None = None,
    tol_deg: float | None = None,
    rtol: float = 1e-9,
    oracle_rtol: float = 1e-6,
) -> TraceComparison:
    """``tr(W dH)`` against ``sum_n <psi_n|W|psi_n> dE_n/dlambda``.

    The spectral side uses HFT diagonals of the adapted basis; the oracle side
    uses FD branch slopes instead.
    """
    W = np.asarray(W, dtype=complex)
    basis = adapted_basis(m, lam, tol_deg)
    w = np.real(np.diag(basis.decomposition.project(W)))
    direct = float(np.real(np.trace(W @ basis.dH)))
    spectral = float(w @ basis.hft_diagonal)
    slopes, notes = branch_slopes_with_notes(m, lam, FDConfig(h), basis.decomposition, tol_deg)
    oracle = float(w @ slopes)
    scale = 1 + max_norm(W) * max_norm(basis.dH)
    return TraceComparison(
        lam, direct, spectral, oracle,
        tolerance=rtol * scale,
        oracle_tolerance=oracle_rtol * scale,
        notes=basis.notes + tuple(notes) + _commutator_note(basis.H, W),
    )


def lemma1_trace(
    m: ModelDefinition,
    lam: float,
    f: MatrixFunctionSpec,
    h: float | None = None,
    tol_deg: float | None = None,
    rtol: float = 1e-6,
) -> TraceComparison:
    """``tr[f(H) dH]`` against ``sum_n f(E_n) dE_n`` and the FD of ``tr F(H)``.

    Tolerances are relative to ``max(1, sum_n |f(E_n)|) * |dH|_max``; the unit floor
    keeps values that are zero up to rounding from demanding sub-ulp agreement. Boltzmann weights are
    shifted by ``E_min`` so the values are reported in units of
    ``exp(-beta E_min)``.
    """
    basis = adapted_basis(m, lam, tol_deg)
    E = basis.decomposition.eigenvalues
    shift = f.shift(E)
    fE = f.scaled(E, shift)
    slopes = basis.hft_diagonal
    spectral = float(fE @ slopes)
    direct = float(np.real(np.trace(f.apply_matrix(basis.H, shift) @ basis.dH)))
    notes = list(basis.notes)
    oracle = None
    if f.antiderivative_scaled(E, shift) is None:
        notes.append(f"no closed-form antiderivative for {f}; oracle leg omitted")
    else:
        oracle = fd_scalar(
            lambda x: float(np.sum(f.antiderivative_scaled(_eigvals(m, x), shift))),
            lam,
            FDConfig(h),
        )
    scale = max(1.0, float(np.sum(np.abs(fE)))) * max(max_norm(basis.dH), _TINY)
    return TraceComparison(
        lam, direct, spectral, oracle,
        tolerance=rtol * scale,
        oracle_tolerance=rtol * scale,
        log_scale=f.log_scale(shift),
        notes=tuple(notes),
    )


def free_energy(m: ModelDefinition, lam: float, beta: float) -> float:
    """``-(1/beta) ln sum_n exp(-beta E_n)`` with the minimum energy factored out."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    E = _eigvals(m, lam)
    e0 = float(E.min())
    return e0 - math.log(float(np.sum(np.exp(-beta * (E - e0))))) / beta


def _free_energy_difference(E_minus, E_plus, beta: float) -> float:
    """``F(plus) - F(minus)`` without subtracting two large free energies.

    Pairs sorted levels; the pairing is arbitrary since only the two sums
    matter, but sorted pairs keep the exponent differences small.
    """
    E_minus, E_plus = np.sort(E_minus), np.sort(E_plus)
    s = min(E_minus.min(), E_plus.min())
    x_minus = -beta * (E_minus - s)
    x_plus = -beta * (E_plus - s)
    z_minus = np.sum(np.exp(x_minus))
    dz = np.sum(np.exp(x_minus) * np.expm1(x_plus - x_minus))
    return float(-math.log1p(dz / z_minus) / beta)


def free_energy_derivative(
    m: ModelDefinition,
    lam: float,
    beta: float,
    h: float | None = None,
    tol_deg: float | None = None,
    rtol: float = 1e-6,
) -> TraceComparison:
    """``dF/dlambda`` as a Boltzmann average of slopes, checked against the FD of ``F``.

    direct: ``tr(rho dH)`` with ``rho = exp(-beta H)/Z`` from a matrix exponential;
    spectral: ``sum_n p_n <chi_n|dH|chi_n>``; oracle: central difference of F.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    basis = adapted_basis(m, lam, tol_deg)
    E = basis.decomposition.eigenvalues
    e0 = float(E.min())
    weights = np.exp(-beta * (E - e0))
    p = weights / weights.sum()
    slopes = basis.hft_diagonal
    spectral = float(p @ slopes)
    n = len(E)
    rho = scipy.linalg.expm(-beta * (basis.H - e0 * np.eye(n)))
    direct = float(np.real(np.trace(rho @ basis.dH) / np.trace(rho)))

    cfg = FDConfig(h)
    estimates = []
    for step in cfg.steps(lam):
        diff = _free_energy_difference(_eigvals(m, lam - step), _eigvals(m, lam + step), beta)
        estimates.append(diff / (2 * step))
    oracle = estimates[0] if len(estimates) == 1 else (4 * estimates[1] - estimates[0]) / 3

    scale = max(max_norm(basis.dH), _TINY)
    return TraceComparison(
        lam, direct, spectral, float(oracle),
        tolerance=rtol * scale,
        oracle_tolerance=rtol * scale,
        notes=basis.notes,
    )


def observable_trace_derivative(
    m: ModelDefinition,
    lam: float,
    W,
    h: float | None = None,
    tol_deg: float | None = None,
    tol: float = 1e-8,
    tol_num: float | None = None,
) -> TraceComparison:
    """``tr(W dA)`` against ``sum_n <psi_n|W|psi_n> da_n/dlambda`` for A commuting with H.

    The identity needs ``A`` and ``dA`` diagonal inside every degenerate cluster
    of the dH-adapted basis. That is measured and reported as the condition
    residual; a violation names the offending cluster.

    Raises:
        CommutationError: if ``|[H, A]|_max > tol_num``.
    """
    W = np.asarray(W, dtype=complex)
    basis = adapted_basis(m, lam, tol_deg)
    A = evaluate_matrix(m, "A", lam)
    dA = evaluate_derivative(m, "A", lam)
    if tol_num is None:
        tol_num = 1e-10 * max(1.0, max_norm(basis.H)) * max(1.0, max_norm(A))
    comm = max_norm(basis.H @ A - A @ basis.H)
    if comm > tol_num:
        raise CommutationError(
            f"A does not commute with H at lambda={lam!r}: |[H,A]|_max = {comm:.3e}"
        )
    d = basis.decomposition
    Ab, dAb = d.project(A), d.project(dA)
    w = np.real(np.diag(d.project(W)))
    da = np.real(np.diag(dAb))

    notes = list(basis.notes)
    condition = 0.0
    for c in basis.partition.clusters:
        sl = slice(c.start, c.stop)
        worst_A = max_norm(Ab[sl, sl] - np.diag(np.diag(Ab[sl, sl])))
        worst_dA = max_norm(dAb[sl, sl] - np.diag(np.diag(dAb[sl, sl])))
        condition = max(condition, worst_A, worst_dA)
        if worst_dA > tol:
            notes.append(
                f"cluster [{c.start + 1}..{c.stop}]: dA is not diagonal in the dH-adapted "
                f"basis (max off-diagonal {worst_dA:.3e}); common-eigenbasis condition violated"
            )
        if worst_A > tol:
            notes.append(
                f"cluster [{c.start + 1}..{c.stop}]: A is not diagonal in the dH-adapted "
                f"basis (max off-diagonal {worst_A:.3e})"
            )

    direct = float(np.real(np.trace(W @ dA)))
    spectral = float(w @ da)
    try:
        oracle = float(w @ fd_rayleigh_slopes(m, "A", lam, FDConfig(h), d, tol_deg))
    except OracleError as exc:
        oracle = None
        notes.append(f"oracle leg omitted: {exc}")
    return TraceComparison(
        lam, direct, spectral, oracle,
        tolerance=tol,
        oracle_tolerance=1e-6 * (1 + max_norm(W) * max_norm(dA)),
        condition_residual=condition,
        condition_tolerance=tol,
        notes=tuple(notes) + _commutator_note(basis.H, W),
    )
