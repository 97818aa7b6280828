"""Biased HSIC estimator with Gaussian RBF kernels and its gradient.

    HSIC(Z, X) = tr(K H L H) / (n - 1)^2,   H = I - 11^T / n

with K_ij = exp(-|z_i - z_j|^2 / (2 s_Z^2)) and likewise L for X.  Bandwidths
default to the median heuristic and are treated as constants when
differentiating.
"""

from __future__ import annotations

import numpy as np

from .numerics import RandomStream

__all__ = [
    "as_samples",
    "pairwise_sq_dists",
    "median_bandwidth",
    "rbf_gram",
    "hsic",
    "hsic_grad",
    "permutation_null",
    "pool_context",
]


def as_samples(data, name: str = "data") -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 1-D or 2-D array, got ndim={arr.ndim}")
    if arr.shape[0] < 2:
        raise ValueError(f"{name} needs at least 2 samples, got {arr.shape[0]}")
    return arr


def pairwise_sq_dists(data: np.ndarray) -> np.ndarray:
    diff = data[:, None, :] - data[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def median_bandwidth(data) -> float:
    """Median of the nonzero pairwise Euclidean distances; 1.0 if all rows coincide."""
    data = as_samples(data)
    iu = np.triu_indices(data.shape[0], k=1)
    dists = np.sqrt(pairwise_sq_dists(data)[iu])
    nonzero = dists[dists > 0]
    if nonzero.size == 0:
        return 1.0
    return float(np.median(nonzero))


def rbf_gram(data, bandwidth: float | None = None) -> tuple[np.ndarray, float]:
    data = as_samples(data)
    if bandwidth is None:
        bandwidth = median_bandwidth(data)
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    return np.exp(-pairwise_sq_dists(data) / (2.0 * bandwidth**2)), float(bandwidth)


def _center(gram: np.ndarray) -> np.ndarray:
    """H G H without forming H."""
    row = gram.mean(axis=1, keepdims=True)
    col = gram.mean(axis=0, keepdims=True)
    return gram - row - col + gram.mean()


def _pair(Z, X):
    Z = as_samples(Z, "Z")
    X = as_samples(X, "X")
    if Z.shape[0] != X.shape[0]:
        raise ValueError(f"row-count mismatch: Z has {Z.shape[0]}, X has {X.shape[0]}")
    return Z, X


def hsic(Z, X, bandwidth_z: float | None = None, bandwidth_x: float | None = None, clamp: bool = True) -> float:
    """Biased HSIC between the rows of ``Z`` and ``X``.

    Small negative round-off is clamped to 0 unless ``clamp=False``.
    """
    Z, X = _pair(Z, X)
    n = Z.shape[0]
    K, _ = rbf_gram(Z, bandwidth_z)
    L, _ = rbf_gram(X, bandwidth_x)
    # centring both Grams is the same trace but gives exact zeros for constant inputs
    value = float(np.sum(_center(K) * _center(L))) / (n - 1) ** 2
    return max(value, 0.0) if clamp else value


def hsic_grad(Z, X, bandwidth_z: float | None = None, bandwidth_x: float | None = None) -> np.ndarray:
    """Gradient of :func:`hsic` with respect to ``Z`` (same shape as ``Z``).

    Bandwidths are held fixed: when left as ``None`` they are computed from
    the inputs by the median heuristic and then treated as constants.
    """
    Z, X = _pair(Z, X)
    n = Z.shape[0]
    K, s_z = rbf_gram(Z, bandwidth_z)
    L, _ = rbf_gram(X, bandwidth_x)
    M = K * _center(L)
    scale = -2.0 / (s_z**2 * (n - 1) ** 2)
    return scale * (M.sum(axis=1)[:, None] * Z - M @ Z)


def permutation_null(Z, X, n_permutations: int, rng: RandomStream) -> np.ndarray:
    """HSIC values after independently permuting the rows of ``X``.

    Bandwidths are fixed at their values on the unpermuted data (row order
    does not change them), so only the pairing is randomised.
    """
    Z, X = _pair(Z, X)
    n = Z.shape[0]
    K = _center(rbf_gram(Z)[0])
    Lc = _center(rbf_gram(X)[0])
    out = np.empty(n_permutations)
    for t in range(n_permutations):
        p = rng.permutation(n)
        out[t] = np.sum(K * Lc[np.ix_(p, p)]) / (n - 1) ** 2
    return out


def pool_context(features, context_cols, pool_size: int = 1) -> np.ndarray:
    """Average-pool the context block of a feature matrix.

    ``context_cols`` are read in order and grouped into consecutive windows
    of ``pool_size`` columns; each window is averaged.  With ``pool_size=1``
    this just selects the columns.
    """
    features = np.asarray(features, dtype=float)
    cols = np.asarray(context_cols, dtype=int)
    if cols.size == 0:
        raise ValueError("context_cols must be nonempty")
    if np.any(cols < 0) or np.any(cols >= features.shape[1]):
        raise ValueError("context_cols out of range for the feature matrix")
    if cols.size % pool_size:
        raise ValueError(f"{cols.size} context columns do not split into windows of {pool_size}")
    block = features[:, cols]
    return block.reshape(features.shape[0], cols.size // pool_size, pool_size).mean(axis=2)
