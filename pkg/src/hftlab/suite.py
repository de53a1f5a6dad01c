"""Running the full check suite over a lambda grid and rendering reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .checks import (
    ResidualReport,
    check_diagonal_hft,
    check_hypervirial,
    check_offdiag_hft,
    check_sum_rule,
    check_unitary_mix,
    random_unitary,
)
from .dsl import ModelDefinition, ModelError, evaluate_matrix, parse_model
from .ensemble import (
    CommutationError,
    free_energy_derivative,
    lemma1_trace,
    observable_trace_derivative,
    trace_weighted_derivative,
)
from .models import builtin_model
from .oracle import GAP_SAFETY, FDConfig, OracleError, adapted_basis
from .scan import ScanResult, lambda_grid, scan_degeneracies
from .spectral import MatrixFunctionSpec, SpectralError, max_norm

__all__ = ["CHECK_NAMES", "RunConfig", "SuiteResult", "load_model", "run_checks", "run_suite"]

CHECK_NAMES = (
    "diagonal_hft",
    "unitary_mix",
    "sum_rule",
    "offdiag_hft",
    "hypervirial",
    "trace_weighted",
    "lemma1",
    "free_energy",
    "observable_trace",
)

MIX_SEED = 20240611
SUM_RULE_TRIALS = 20


@dataclass(frozen=True)
class RunConfig:
    model_path: str | None = None
    builtin: str | None = None
    grid: tuple[float, float, int] | None = None
    lam: float | None = None
    betas: tuple[float, ...] = (1.0,)
    tol_deg: float | None = None
    fd_step: float | None = None
    json: bool = False
    checks: tuple[str, ...] = CHECK_NAMES

    def __post_init__(self):
        if (self.model_path is None) == (self.builtin is None):
            raise ValueError("give exactly one of a model file or a built-in model name")
        if self.grid is not None and self.lam is not None:
            raise ValueError("give either a single lambda or a grid, not both")
        if self.grid is not None:
            start, stop, count = self.grid
            if count < 1 or start > stop:
                raise ValueError("grid needs count >= 1 and start <= stop")
        if any(not b > 0 for b in self.betas):
            raise ValueError("beta values must be positive")
        unknown = set(self.checks) - set(CHECK_NAMES)
        if unknown:
            raise ValueError(
                f"unknown checks: {', '.join(sorted(unknown))} (known: {', '.join(CHECK_NAMES)})"
            )

    @property
    def model_label(self) -> str:
        return self.model_path if self.model_path is not None else self.builtin

    def lambdas(self) -> np.ndarray:
        if self.lam is not None:
            return np.array([float(self.lam)])
        if self.grid is None:
            return lambda_grid(-1.0, 1.0, 21)
        start, stop, count = self.grid
        return lambda_grid(float(start), float(stop), int(count))


@dataclass
class SuiteResult:
    model: str
    grid: list[float]
    scan: ScanResult | None
    reports: list[ResidualReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    @property
    def exit_status(self) -> int:
        return 0 if self.passed else 1

    def to_dict(self, timestamp: str | None = None) -> dict:
        points = self.scan.points if self.scan is not None else ()
        return {
            "model": self.model,
            "grid": [float(x) for x in self.grid],
            "degeneracy_points": [{"lambda0": p.lambda0, "g": p.g} for p in points],
            "checks": [r.to_dict() for r in self.reports],
            "timestamp": timestamp or datetime.now(timezone.utc).isoformat(),
        }

    def to_json(self, timestamp: str | None = None) -> str:
        return json.dumps(self.to_dict(timestamp), indent=2)

    def to_text(self) -> str:
        lines = [f"model: {self.model}"]
        if self.scan is not None:
            if self.scan.points:
                for p in self.scan.points:
                    lines.append(f"degeneracy point: lambda0 = {p.lambda0:+.12g}  g = {p.g}")
            else:
                lines.append("degeneracy points: none found")
        lines += [str(r) for r in self.reports]
        failed = sum(not r.passed for r in self.reports)
        lines.append(f"{len(self.reports)} checks, {failed} failed")
        return "\n".join(lines)


def load_model(cfg: RunConfig) -> ModelDefinition:
    if cfg.builtin is not None:
        return builtin_model(cfg.builtin)
    return parse_model(Path(cfg.model_path).read_text(encoding="utf-8"))


def _failure(name: str, lam: float, exc: Exception) -> ResidualReport:
    return ResidualReport(name, lam, math.inf, 0.0, notes=(f"{type(exc).__name__}: {exc}",))


def _tag(reports, variant: str):
    if not variant:
        return list(reports)
    return [replace(r, name=f"{r.name}[{variant}]") for r in reports]


def _guarded(name, lam, fn):
    try:
        return fn()
    except (OracleError, ModelError, SpectralError, CommutationError, ValueError) as exc:
        return [_failure(name, lam, exc)]


def _checks_at(m: ModelDefinition, lam: float, cfg: RunConfig, index: int) -> list[ResidualReport]:
    h, tol_deg, wanted = cfg.fd_step, cfg.tol_deg, set(cfg.checks)
    out: list[ResidualReport] = []
    basis = adapted_basis(m, lam, tol_deg)
    H, n = basis.H, m.dimension
    eye = np.eye(n, dtype=complex)
    H2 = H @ H
    poly = MatrixFunctionSpec.polynomial_of(1, 2, 0.5)
    weights = {"I": eye, "H": H, "H^2": H2}
    if "W" in m:
        weights["W"] = evaluate_matrix(m, "W", lam)

    if "diagonal_hft" in wanted:
        out += _guarded("diagonal_hft", lam, lambda: [check_diagonal_hft(m, lam, h, tol_deg=tol_deg)])

    clusters = basis.partition.degenerate
    if "unitary_mix" in wanted:
        for k, c in enumerate(clusters):
            rng = np.random.default_rng([MIX_SEED, index, k])
            U = random_unitary(len(c), rng)
            out += _tag(
                _guarded("unitary_mix", lam, lambda: [check_unitary_mix(m, lam, U, c, h=h, tol_deg=tol_deg)]),
                f"levels {c.start + 1}..{c.stop}",
            )
    if "sum_rule" in wanted:
        for k, c in enumerate(clusters):
            out += _tag(
                _guarded(
                    "sum_rule", lam,
                    lambda: [check_sum_rule(m, lam, c, SUM_RULE_TRIALS, seed=MIX_SEED + k, h=h, tol_deg=tol_deg)],
                ),
                f"levels {c.start + 1}..{c.stop}",
            )
    if "offdiag_hft" in wanted and not clusters and n > 1:
        step = FDConfig(h).step_at(lam)
        gap = float(np.min(np.diff(basis.decomposition.eigenvalues)))
        if gap > GAP_SAFETY * step * max_norm(basis.dH):
            out += _guarded("offdiag_hft", lam, lambda: [check_offdiag_hft(m, lam, h, tol_deg=tol_deg)])

    if "hypervirial" in wanted:
        hv_weights = {"H^2": H2, str(poly).replace("polynomial", "poly") + "(H)": poly.apply_matrix(H)}
        if "W" in m:
            hv_weights["W"] = weights["W"]
        for label, W in hv_weights.items():
            out += _tag(
                _guarded("hypervirial", lam, lambda: [check_hypervirial(H, W, basis.decomposition, basis.partition)]),
                f"W={label}",
            )
    if "trace_weighted" in wanted:
        for label, W in weights.items():
            out += _tag(
                _guarded("trace_weighted", lam, lambda: trace_weighted_derivative(m, lam, W, h, tol_deg).reports("trace_weighted")),
                f"W={label}",
            )
    if "lemma1" in wanted:
        fs = [MatrixFunctionSpec.boltzmann(b) for b in cfg.betas]
        fs.append(MatrixFunctionSpec.polynomial_of(0, 1))
        for f in fs:
            out += _tag(
                _guarded("lemma1", lam, lambda: lemma1_trace(m, lam, f, h, tol_deg).reports("lemma1")),
                str(f),
            )
    if "free_energy" in wanted:
        for b in cfg.betas:
            out += _tag(
                _guarded("free_energy", lam, lambda: free_energy_derivative(m, lam, b, h, tol_deg).reports("free_energy")),
                f"beta={b:g}",
            )
    if "observable_trace" in wanted and "A" in m:
        out += _tag(
            _guarded(
                "observable_trace", lam,
                lambda: observable_trace_derivative(m, lam, eye, h, tol_deg).reports("observable_trace"),
            ),
            "W=I",
        )
    return out


def run_checks(m: ModelDefinition, cfg: RunConfig) -> SuiteResult:
    """Scan for degeneracy points (grid runs only), add them to the grid, run every selected check."""
    grid = [float(x) for x in cfg.lambdas()]
    scan = None
    if len(grid) >= 3:
        scan = scan_degeneracies(m, grid, cfg.tol_deg)
        for x0 in scan.lambdas:
            grid = [x for x in grid if abs(x - x0) > 1e-9 * max(1.0, abs(x0))]
            grid.append(x0)
        grid.sort()
    result = SuiteResult(cfg.model_label, grid, scan)
    for index, lam in enumerate(grid):
        try:
            result.reports += _checks_at(m, lam, cfg, index)
        except (ModelError, SpectralError) as exc:
            result.reports.append(_failure("model_evaluation", lam, exc))
    return result


def run_suite(cfg: RunConfig) -> SuiteResult:
    return run_checks(load_model(cfg), cfg)
