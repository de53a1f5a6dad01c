"""Eigendecomposition, degeneracy clusters and adapted eigenbases.

Everything here works on dense complex Hermitian ``ndarray`` objects and is
free of any model/DSL knowledge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from numpy.polynomial import Polynomial
from numpy.typing import NDArray

__all__ = [
    "SpectralError",
    "SpectralDecomposition",
    "DegeneracyPartition",
    "MatrixFunctionSpec",
    "MatrixFunctionValue",
    "CONTINUATION_THRESHOLD",
    "default_tol_deg",
    "eigendecompose",
    "cluster_degeneracies",
    "rotate_within_clusters",
    "align_continuation",
    "matrix_function",
]

CONTINUATION_THRESHOLD = 1 / math.sqrt(2)

UNRESOLVED = "unresolved at first order"
UNRELIABLE = "continuation unreliable (step too large)"


class SpectralError(RuntimeError):
    pass


def max_norm(a) -> float:
    a = np.asarray(a)
    return float(np.max(np.abs(a))) if a.size else 0.0


def default_tol_deg(H) -> float:
    """Cluster threshold ``1e-8 * max(1, |H|_max)``."""
    return 1e-8 * max(1.0, max_norm(H))


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues and eigenvector columns of a Hermitian matrix at one lambda.

    ``eigenvalues`` are ascending as returned by :func:`eigendecompose`. After
    :func:`align_continuation` columns follow branches instead, so the order may
    differ; ``perm`` then records which ascending index each column came from.
    """

    lam: float | None
    eigenvalues: NDArray[np.float64]
    eigenvectors: NDArray[np.complex128]
    perm: tuple[int, ...] | None = None
    notes: tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    def reconstruct(self) -> NDArray[np.complex128]:
        U = self.eigenvectors
        return (U * self.eigenvalues) @ U.conj().T

    def project(self, M) -> NDArray[np.complex128]:
        """Matrix elements ``<psi_i| M |psi_j>`` in this basis."""
        U = self.eigenvectors
        return U.conj().T @ M @ U


@dataclass(frozen=True)
class DegeneracyPartition:
    clusters: tuple[range, ...]
    tol: float

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.clusters)

    @property
    def degenerate(self) -> tuple[range, ...]:
        return tuple(c for c in self.clusters if len(c) > 1)

    def cluster_of(self, index: int) -> range:
        for c in self.clusters:
            if index in c:
                return c
        raise IndexError(index)

    def labels(self) -> NDArray[np.int64]:
        out = np.empty(sum(self.sizes), dtype=int)
        for k, c in enumerate(self.clusters):
            out[c.start : c.stop] = k
        return out


def eigendecompose(H, lam: float | None = None) -> SpectralDecomposition:
    H = np.asarray(H, dtype=complex)
    try:
        evals, evecs = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"eigendecomposition failed: {exc}") from exc
    return SpectralDecomposition(lam, evals, evecs)


def cluster_degeneracies(d: SpectralDecomposition, tol: float) -> DegeneracyPartition:
    """Greedy contiguous clustering of the (ascending) eigenvalues.

    Index ``j`` joins the open cluster iff ``E_j - E_first <= tol``. A chain of
    levels spaced just under ``tol`` is therefore split, not merged.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    E = d.eigenvalues
    clusters = []
    start = 0
    for j in range(1, len(E)):
        if E[j] - E[start] > tol:
            clusters.append(range(start, j))
            start = j
    clusters.append(range(start, len(E)))
    return DegeneracyPartition(tuple(clusters), tol)


def rotate_within_clusters(
    d: SpectralDecomposition, dH, p: DegeneracyPartition
) -> SpectralDecomposition:
    """Diagonalize ``dH`` inside every degenerate cluster.

    The new cluster vectors are ordered by ascending ``<chi|dH|chi>``. If the
    projected block is itself degenerate the rotation is still applied and the
    cluster is noted as unresolved at first order.
    """
    dH = np.asarray(dH, dtype=complex)
    if dH.shape != (d.dim, d.dim):
        raise ValueError("dH has the wrong shape")
    U = d.eigenvectors.copy()
    notes = list(d.notes)
    for c in p.degenerate:
        V = U[:, c.start : c.stop]
        block = V.conj().T @ dH @ V
        block = (block + block.conj().T) / 2
        w, R = np.linalg.eigh(block)
        U[:, c.start : c.stop] = V @ R
        if np.any(np.diff(w) <= p.tol):
            notes.append(f"cluster {_fmt(c)}: dH block degenerate, {UNRESOLVED}")
    return replace(d, eigenvectors=U, notes=tuple(notes))


def _fmt(c: range) -> str:
    # 1-based, inclusive, for messages
    return f"[{c.start + 1}..{c.stop}]"


def _procrustes_clusters(prev: NDArray, nxt: SpectralDecomposition, tol: float) -> NDArray:
    """Inside each degenerate cluster of ``nxt`` pick the basis closest to ``prev``."""
    U = nxt.eigenvectors.copy()
    for c in cluster_degeneracies(nxt, tol).degenerate:
        V = U[:, c.start : c.stop]
        weights = np.sum(np.abs(V.conj().T @ prev) ** 2, axis=0)
        sel = np.sort(np.argsort(-weights, kind="stable")[: len(c)])
        Q = V.conj().T @ prev[:, sel]
        A, _, Bh = np.linalg.svd(Q)
        U[:, c.start : c.stop] = V @ (A @ Bh)
    return U


def align_continuation(
    prev: SpectralDecomposition, nxt: SpectralDecomposition, tol_deg: float | None = None
) -> SpectralDecomposition:
    """Relabel and rephase ``nxt`` so its columns continue the branches of ``prev``.

    Columns are matched greedily by largest ``|<prev_k|next_j>|``; each matched
    column is then multiplied by a phase making the overlap real and positive.
    Exactly degenerate clusters of ``nxt`` (within ``tol_deg``) are first
    rotated towards ``prev``, since their basis is arbitrary anyway.
    """
    if prev.dim != nxt.dim:
        raise ValueError("decompositions differ in dimension")
    if tol_deg is None:
        tol_deg = 1e-8 * max(1.0, float(np.max(np.abs(nxt.eigenvalues))))
    P = prev.eigenvectors
    U = _procrustes_clusters(P, nxt, tol_deg)
    overlaps = P.conj().T @ U
    mag = np.abs(overlaps)

    n = nxt.dim
    perm = [-1] * n
    free_rows, free_cols = set(range(n)), set(range(n))
    for flat in np.argsort(-mag, axis=None, kind="stable"):
        k, j = divmod(int(flat), n)
        if k in free_rows and j in free_cols:
            perm[k] = j
            free_rows.discard(k)
            free_cols.discard(j)
            if not free_rows:
                break

    notes = list(nxt.notes)
    worst = min(mag[k, perm[k]] for k in range(n))
    if worst < CONTINUATION_THRESHOLD:
        notes.append(f"{UNRELIABLE}: worst overlap {worst:.3f}")

    cols = U[:, perm]
    o = overlaps[np.arange(n), perm]
    phase = np.ones(n, dtype=complex)
    nonzero = np.abs(o) > 0
    phase[nonzero] = np.conj(o[nonzero]) / np.abs(o[nonzero])
    source = perm if nxt.perm is None else [nxt.perm[j] for j in perm]
    return SpectralDecomposition(
        nxt.lam, nxt.eigenvalues[perm], cols * phase, tuple(source), tuple(notes)
    )


def is_unreliable(d: SpectralDecomposition) -> bool:
    return any(note.startswith(UNRELIABLE) for note in d.notes)


# ---------------------------------------------------------------------------
# Matrix functions


@dataclass(frozen=True)
class MatrixFunctionSpec:
    """A scalar weight ``f`` applied to a spectrum or a matrix.

    ``polynomial`` coefficients are in ascending powers, so ``(1, 2, 0.5)``
    is ``1 + 2E + 0.5E^2``.
    """

    kind: str
    beta: float | None = None
    power: int | None = None
    coefficients: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.kind not in ("boltzmann", "power", "polynomial", "identity"):
            raise ValueError(f"unknown matrix function kind {self.kind!r}")
        if self.kind == "boltzmann" and not (self.beta is not None and self.beta > 0):
            raise ValueError("boltzmann weight needs beta > 0")
        if self.kind == "power" and not isinstance(self.power, int):
            raise ValueError("power weight needs an integer exponent")
        if self.kind == "polynomial" and not self.coefficients:
            raise ValueError("polynomial weight needs coefficients")

    @classmethod
    def boltzmann(cls, beta: float) -> MatrixFunctionSpec:
        return cls("boltzmann", beta=float(beta))

    @classmethod
    def power_of(cls, p: int) -> MatrixFunctionSpec:
        return cls("power", power=int(p))

    @classmethod
    def polynomial_of(cls, *coefficients: float) -> MatrixFunctionSpec:
        return cls("polynomial", coefficients=tuple(float(c) for c in coefficients))

    @classmethod
    def identity(cls) -> MatrixFunctionSpec:
        return cls("identity")

    def __str__(self) -> str:
        if self.kind == "boltzmann":
            return f"boltzmann({self.beta:g})"
        if self.kind == "power":
            return f"power({self.power})"
        if self.kind == "polynomial":
            return "polynomial(" + ",".join(f"{c:g}" for c in self.coefficients) + ")"
        return "identity"

    def shift(self, E) -> float:
        """Energy subtracted inside ``exp`` to avoid overflow (0 if unused)."""
        if self.kind == "boltzmann":
            return float(np.min(E))
        return 0.0

    def log_scale(self, shift: float) -> float:
        """``log`` of the factor removed by ``shift``: ``f = exp(log_scale) * f_scaled``."""
        return -self.beta * shift if self.kind == "boltzmann" else 0.0

    def scaled(self, E, shift: float = 0.0) -> NDArray[np.float64]:
        E = np.asarray(E, dtype=float)
        if self.kind == "boltzmann":
            return np.exp(-self.beta * (E - shift))
        if self.kind == "power":
            return E**self.power if self.power >= 0 else 1.0 / E ** (-self.power)
        if self.kind == "polynomial":
            return Polynomial(self.coefficients)(E)
        return E.copy()

    def __call__(self, E) -> NDArray[np.float64]:
        return self.scaled(E)

    def antiderivative_scaled(self, E, shift: float = 0.0) -> NDArray[np.float64] | None:
        """``F`` with ``F' = f`` (same scaling as :meth:`scaled`), or None."""
        E = np.asarray(E, dtype=float)
        if self.kind == "boltzmann":
            return -np.exp(-self.beta * (E - shift)) / self.beta
        if self.kind == "power":
            if self.power == -1:
                return None
            return E ** (self.power + 1) / (self.power + 1)
        if self.kind == "polynomial":
            return Polynomial(self.coefficients).integ()(E)
        return E**2 / 2

    def apply_matrix(self, H, shift: float = 0.0) -> NDArray[np.complex128]:
        """Evaluate the scaled function directly on the matrix (no eigenbasis)."""
        H = np.asarray(H, dtype=complex)
        n = H.shape[0]
        eye = np.eye(n, dtype=complex)
        if self.kind == "boltzmann":
            return scipy.linalg.expm(-self.beta * (H - shift * eye))
        if self.kind == "power":
            return np.linalg.matrix_power(H, self.power)
        if self.kind == "polynomial":
            out = np.zeros_like(H)
            for c in reversed(self.coefficients):
                out = out @ H + c * eye
            return out
        return H.copy()


@dataclass(frozen=True)
class MatrixFunctionValue:
    """``f(H) = exp(log_scale) * scaled``."""

    scaled: NDArray[np.complex128]
    log_scale: float = 0.0

    @property
    def value(self) -> NDArray[np.complex128]:
        return self.scaled * math.exp(self.log_scale)


def matrix_function(d: SpectralDecomposition, f: MatrixFunctionSpec) -> MatrixFunctionValue:
    """``sum_n f(E_n) |psi_n><psi_n|``, with the Boltzmann shift tracked in ``log_scale``."""
    s = f.shift(d.eigenvalues)
    w = f.scaled(d.eigenvalues, s)
    U = d.eigenvectors
    return MatrixFunctionValue((U * w) @ U.conj().T, f.log_scale(s))
