"""Spectral diversity: Vendi score, entropy loss, and its analytic gradient.

The loss is the von Neumann entropy of the batch-normalized similarity kernel,
L = -sum_k lambda_k log lambda_k over the eigenvalues of K/B, and the score is
exp(L), interpretable as the effective number of distinct samples (1 to B).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import (
    ContextBatch,
    SymMatrix,
    cosine_kernel,
    jacobi_eigh,
    rbf_kernel,
)

EIGENVALUE_FLOOR = 1e-12

_UNIT_DIAGONAL_TOLERANCE = 1e-9


@dataclass(frozen=True)
class DiversityValue:
    """Entropy in nats together with its exponential (the score)."""

    entropy: float
    score: float


def entropy_and_score(k: SymMatrix) -> DiversityValue:
    """Spectral entropy of K/B and its exponential.

    Eigenvalues are floored at 1e-12 before the log, which realizes the
    0 log 0 = 0 convention for rank-deficient kernels (identical samples).
    """
    diag = np.diag(k.entries)
    if float(np.max(np.abs(diag - 1.0))) > _UNIT_DIAGONAL_TOLERANCE:
        raise ValueError("kernel must have unit diagonal")
    normalized = SymMatrix(k.entries / k.dim)
    lam = jacobi_eigh(normalized).eigenvalues
    safe = np.maximum(lam, EIGENVALUE_FLOOR)
    entropy = max(float(-np.sum(lam * np.log(safe))), 0.0)
    if entropy < 1e-14:
        # below the eigensolver's own residual floor; identical samples land here
        entropy = 0.0
    return DiversityValue(entropy=entropy, score=float(np.exp(entropy)))


def entropy_gradient(batch: ContextBatch) -> np.ndarray:
    """Exact gradient of the entropy loss with respect to the raw vectors.

    Chain rule through the cosine kernel: with eigenpairs (lambda, U) of
    K/B and floored eigenvalues, dL/dK = U diag(-(log lambda + 1)) U^T / B,
    and dK_ij/dc_i = c_j/(|c_i||c_j|) - K_ij c_i/|c_i|^2 for i != j (the unit
    diagonal contributes nothing). Symmetry of K doubles the off-diagonal
    terms. Returns an array with the same shape as ``batch.vectors``.
    """
    b = batch.batch_size
    if b < 2:
        raise ValueError("gradient requires at least two samples")
    vectors = batch.vectors
    norms = np.linalg.norm(vectors, axis=1)
    unit = vectors / norms[:, None]

    kernel = cosine_kernel(batch).entries
    decomposition = jacobi_eigh(SymMatrix(kernel / b))
    safe = np.maximum(decomposition.eigenvalues, EIGENVALUE_FLOOR)
    f_prime = -(np.log(safe) + 1.0)
    u = decomposition.eigenvectors
    dl_dk = (u * f_prime) @ u.T / b

    off = dl_dk.copy()
    np.fill_diagonal(off, 0.0)
    radial = np.sum(off * kernel, axis=1)
    grad = 2.0 * (off @ unit - radial[:, None] * unit) / norms[:, None]
    return grad


def average_pair_vendi(
    points: ContextBatch,
    kernel_kind: str = "cosine",
    bandwidth: float | None = None,
) -> float:
    """Mean 2-sample score over all unordered pairs; lies in [1, 2]."""
    b = points.batch_size
    if b < 2:
        raise ValueError("pair average requires at least two samples")
    if kernel_kind == "cosine":
        full = cosine_kernel(points).entries
    elif kernel_kind == "rbf":
        if bandwidth is None:
            raise ValueError("rbf kernel requires a bandwidth")
        full = rbf_kernel(points, bandwidth).entries
    else:
        raise ValueError(f"unknown kernel kind {kernel_kind!r}")

    total = 0.0
    count = 0
    for i in range(b - 1):
        for j in range(i + 1, b):
            k_ij = full[i, j]
            pair = SymMatrix(np.array([[1.0, k_ij], [k_ij, 1.0]]))
            total += entropy_and_score(pair).score
            count += 1
    return total / count
