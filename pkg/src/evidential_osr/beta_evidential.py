"""Beta loss over multi-label evidence, its gradient, and the two-class Dirichlet loss.

For actor j and class i with evidence (a, b) and binary label y the loss term is

    y (psi(a + b) - psi(a)) + (1 - y) (psi(a + b) - psi(b)),

the expected binary cross-entropy under Beta(p; a, b).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import digamma, trigamma

__all__ = [
    "LossReport",
    "check_labels",
    "beta_loss_terms",
    "beta_loss",
    "beta_loss_grad",
    "dirichlet_binary_loss",
]


@dataclass(frozen=True)
class LossReport:
    total: float
    per_actor: np.ndarray


def check_labels(y) -> np.ndarray:
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be strictly binary (0 or 1)")
    return y.astype(float)


def _validate(alpha, beta, y):
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    y = np.atleast_2d(check_labels(y))
    if not (alpha.shape == beta.shape == y.shape):
        raise ValueError(f"shape mismatch: alpha {alpha.shape}, beta {beta.shape}, y {y.shape}")
    if np.any(alpha < 1.0) or np.any(beta < 1.0):
        raise ValueError("evidence below 1: alpha and beta must be >= 1 elementwise")
    return alpha, beta, y


def beta_loss_terms(alpha, beta, y) -> np.ndarray:
    """Per-actor, per-class loss terms, shape (N, K). Every entry is >= 0."""
    alpha, beta, y = _validate(alpha, beta, y)
    psi_sum = digamma(alpha + beta)
    return y * (psi_sum - digamma(alpha)) + (1.0 - y) * (psi_sum - digamma(beta))


def beta_loss(alpha, beta, y, reduction: str = "sum") -> LossReport:
    """Beta loss of an (N, K) batch.

    ``reduction="sum"`` adds the per-actor losses; ``"mean"`` divides that
    sum by N.  ``per_actor`` is always unreduced.
    """
    terms = beta_loss_terms(alpha, beta, y)
    per_actor = terms.sum(axis=1)
    total = math.fsum(per_actor)
    if reduction == "mean":
        total /= per_actor.size
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return LossReport(total=total, per_actor=per_actor)


def beta_loss_grad(alpha, beta, y, reduction: str = "sum") -> tuple[np.ndarray, np.ndarray]:
    """Gradients (dL/dalpha, dL/dbeta) of :func:`beta_loss`, each shaped like alpha."""
    alpha, beta, y = _validate(alpha, beta, y)
    tri_sum = trigamma(alpha + beta)
    d_alpha = tri_sum - y * trigamma(alpha)
    d_beta = tri_sum - (1.0 - y) * trigamma(beta)
    if reduction == "mean":
        n = alpha.shape[0]
        d_alpha /= n
        d_beta /= n
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return d_alpha, d_beta


def dirichlet_binary_loss(alpha, beta, y):
    """Expected cross-entropy under a two-class Dirichlet(alpha, beta) with one-hot (y, 1 - y).

    Accepts scalars or equal-shape arrays; returns the same kind.
    """
    y_arr = np.asarray(y)
    if not np.all((y_arr == 0) | (y_arr == 1)):
        raise ValueError(f"label must be 0 or 1, got {y!r}")
    conc = np.stack(np.broadcast_arrays(np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float)))
    if np.any(conc < 1.0):
        raise ValueError("evidence must be >= 1")
    onehot = np.stack([y_arr, 1 - y_arr]).astype(float)
    out = (onehot * (digamma(conc.sum(axis=0)) - digamma(conc))).sum(axis=0)
    return float(out) if out.ndim == 0 else out
