"""Small symmetric eigensolver and kernel-matrix construction.

Everything here operates on dense float64 arrays at batch scale (a few dozen
samples), where a cyclic Jacobi solver is simpler and more reproducible than
iterative large-scale methods.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_EIGH_DIM = 1024

_ASYMMETRY_TOLERANCE = 1e-9
_OFFDIAG_TOLERANCE = 1e-14
_MAX_SWEEPS = 100


class NonConvergence(ArithmeticError):
    """Jacobi sweeps failed to reduce the off-diagonal norm below tolerance."""


class DegenerateVector(ValueError):
    """A sample vector has zero Euclidean norm."""


class SymMatrix:
    """Real symmetric matrix, symmetrized as (A + A^T)/2 on construction.

    Asymmetry above 1e-9 (max absolute entry difference) is rejected; smaller
    asymmetry is repaired silently.
    """

    def __init__(self, entries):
        a = np.array(entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if a.shape[0] < 1:
            raise ValueError("matrix must have dimension >= 1")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix entries must be finite")
        asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
        if asym > _ASYMMETRY_TOLERANCE:
            raise ValueError(f"input asymmetry {asym:.3e} exceeds {_ASYMMETRY_TOLERANCE}")
        self.entries = (a + a.T) / 2.0
        self.dim = int(a.shape[0])

    def __repr__(self) -> str:
        return f"SymMatrix(dim={self.dim})"


@dataclass(frozen=True)
class EigenDecomposition:
    """Spectrum of a symmetric matrix: descending eigenvalues, orthonormal columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


class ContextBatch:
    """Batch of flattened per-sample context vectors, one row per sample.

    Rows with zero Euclidean norm are rejected; kernels in this module divide
    by the norms.
    """

    def __init__(self, vectors):
        v = np.array(vectors, dtype=float)
        if v.ndim != 2:
            raise ValueError(f"expected a 2-d batch, got shape {v.shape}")
        if v.shape[0] < 1:
            raise ValueError("batch must contain at least one sample")
        if not np.all(np.isfinite(v)):
            raise ValueError("batch entries must be finite")
        norms = np.linalg.norm(v, axis=1)
        if np.any(norms == 0.0):
            raise DegenerateVector("zero-norm sample vector in batch")
        self.vectors = v

    @property
    def batch_size(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def vector_dim(self) -> int:
        return int(self.vectors.shape[1])

    def __repr__(self) -> str:
        return f"ContextBatch(batch_size={self.batch_size}, vector_dim={self.vector_dim})"


def _offdiag_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.linalg.norm(off))


def jacobi_eigh(m: SymMatrix, max_sweeps: int = _MAX_SWEEPS) -> EigenDecomposition:
    """Full eigendecomposition by row-cyclic Jacobi rotations.

    Converges when the off-diagonal Frobenius norm drops below 1e-14 times the
    Frobenius norm of the input; raises :class:`NonConvergence` after
    ``max_sweeps`` sweeps otherwise. Output ordering is deterministic:
    eigenvalues descend, and each eigenvector's first component larger than
    1e-12 in magnitude is made non-negative.
    """
    n = m.dim
    if n > MAX_EIGH_DIM:
        raise ValueError(f"dimension {n} exceeds supported maximum {MAX_EIGH_DIM}")
    a = m.entries.copy()
    v = np.eye(n)
    tol = _OFFDIAG_TOLERANCE * float(np.linalg.norm(a))
    # rotating every pivot above tol/n forces the off-norm under tol
    pivot_tol = tol / max(n, 1)

    sweeps = 0
    while _offdiag_norm(a) > tol:
        if sweeps >= max_sweeps:
            raise NonConvergence(
                f"off-diagonal norm {_offdiag_norm(a):.3e} above {tol:.3e} "
                f"after {max_sweeps} sweeps"
            )
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= pivot_tol:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                # smaller-root tangent keeps the rotation angle below pi/4
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                a[p, :] = a[:, p]
                a[q, :] = a[:, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0

                vec_p = v[:, p].copy()
                vec_q = v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
        sweeps += 1

    eigenvalues = np.diag(a).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    eigenvalues = eigenvalues[order]
    vectors = v[:, order]
    for k in range(n):
        column = vectors[:, k]
        nonzero = np.nonzero(np.abs(column) > 1e-12)[0]
        if nonzero.size and column[nonzero[0]] < 0.0:
            vectors[:, k] = -column
    return EigenDecomposition(eigenvalues=eigenvalues, eigenvectors=vectors)


def cosine_kernel(batch: ContextBatch) -> SymMatrix:
    """Pairwise cosine similarities; unit diagonal, entries in [-1, 1]."""
    norms = np.linalg.norm(batch.vectors, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateVector("zero-norm sample vector")
    unit = batch.vectors / norms[:, None]
    k = unit @ unit.T
    np.clip(k, -1.0, 1.0, out=k)
    # directions closer than 1e-12 in cosine are numerically identical;
    # snapping makes duplicate samples give an exactly rank-deficient kernel
    k[k > 1.0 - 1e-12] = 1.0
    k[k < -1.0 + 1e-12] = -1.0
    np.fill_diagonal(k, 1.0)
    return SymMatrix(k)


def rbf_kernel(points: ContextBatch, bandwidth: float) -> SymMatrix:
    """Gaussian kernel exp(-||x_i - x_j||^2 / (2 h^2)); unit diagonal."""
    if not (bandwidth > 0.0):
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    x = points.vectors
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.clip(d2, 0.0, None, out=d2)
    k = np.exp(-d2 / (2.0 * bandwidth * bandwidth))
    np.fill_diagonal(k, 1.0)
    return SymMatrix(k)
