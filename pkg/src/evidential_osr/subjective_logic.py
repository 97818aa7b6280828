"""Binomial opinions from Beta evidence, and novelty scores built on them.

Every novelty score here is oriented so that a larger value means the actor
is more likely to carry only unseen actions.  That includes the belief score,
which is reported as ``1 - b`` with ``b`` the co-multiplied class belief.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .numerics import stable_logistic

__all__ = [
    "DEFAULT_PRIOR_WEIGHT",
    "DEFAULT_BASE_RATE",
    "Opinion",
    "EvidencePair",
    "NoveltyScores",
    "opinion_from_evidence",
    "opinion_arrays",
    "comultiply",
    "novelty_scores",
    "novelty_score_arrays",
    "MECHANISMS",
]

DEFAULT_PRIOR_WEIGHT = 2.0
DEFAULT_BASE_RATE = 1.0

MECHANISMS = ("PE", "NE", "PNE", "Belief")


@dataclass(frozen=True)
class Opinion:
    """Binomial opinion (b, d, u, a) with the prior weight it was built with."""

    belief: float
    disbelief: float
    uncertainty: float
    base_rate: float
    prior_weight: float = DEFAULT_PRIOR_WEIGHT

    @property
    def expected_probability(self) -> float:
        """p = b + a * u."""
        return self.belief + self.base_rate * self.uncertainty


@dataclass(frozen=True)
class EvidencePair:
    """Positive (alpha) and negative (beta) evidence over K classes for one actor."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float).reshape(-1)
        b = np.asarray(self.beta, dtype=float).reshape(-1)
        if a.shape != b.shape or a.size == 0:
            raise ValueError(f"alpha and beta must be nonempty and equal length, got {a.shape} and {b.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("evidence must be finite")
        if np.any(a < 1.0) or np.any(b < 1.0):
            raise ValueError("evidence must be >= 1 elementwise")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @property
    def K(self) -> int:
        return self.alpha.size


@dataclass(frozen=True)
class NoveltyScores:
    pe: float
    ne: float
    pne: float
    belief: float

    def as_dict(self) -> dict[str, float]:
        return {"PE": self.pe, "NE": self.ne, "PNE": self.pne, "Belief": self.belief}


def _check_prior(W: float, a: float) -> None:
    if not W > 0:
        raise ValueError(f"prior weight W must be positive, got {W}")
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"base rate a must lie in [0, 1], got {a}")


def opinion_from_evidence(
    alpha: float,
    beta: float,
    W: float = DEFAULT_PRIOR_WEIGHT,
    a: float = DEFAULT_BASE_RATE,
) -> Opinion:
    """Map one (alpha, beta) evidence pair to an opinion.

    b = (alpha - aW)/S, d = (beta - aW)/S, u = W/S with S = alpha + beta.
    With the default a = 1 the belief can be negative; b + d + u = 1 only
    holds for a = 1/2.
    """
    _check_prior(W, a)
    if alpha < 1.0 or beta < 1.0:
        raise ValueError(f"evidence must be >= 1, got alpha={alpha}, beta={beta}")
    S = float(alpha) + float(beta)
    if S == 0.0:
        raise ValueError("alpha + beta must be nonzero")
    return Opinion(
        belief=(alpha - a * W) / S,
        disbelief=(beta - a * W) / S,
        uncertainty=W / S,
        base_rate=a,
        prior_weight=W,
    )


def opinion_arrays(alpha, beta, W: float = DEFAULT_PRIOR_WEIGHT, a: float = DEFAULT_BASE_RATE):
    """Vectorised :func:`opinion_from_evidence`; returns arrays (b, d, u, p)."""
    _check_prior(W, a)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    S = alpha + beta
    b = (alpha - a * W) / S
    d = (beta - a * W) / S
    u = W / S
    return b, d, u, b + a * u


def comultiply(b1: float, b2: float) -> float:
    """Binomial co-multiplication b1 * b2 := b1 + b2 - b1 b2 on [0, 1]."""
    for v in (b1, b2):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"beliefs must lie in [0, 1], got {v}")
    return b1 + b2 - b1 * b2


def novelty_scores(
    ev: EvidencePair,
    W: float = DEFAULT_PRIOR_WEIGHT,
    a: float = DEFAULT_BASE_RATE,
) -> NoveltyScores:
    """PE, NE, PNE and belief-based novelty for a single actor."""
    out = novelty_score_arrays(ev.alpha[None, :], ev.beta[None, :], W=W, a=a)
    return NoveltyScores(*(float(out[k][0]) for k in MECHANISMS))


def novelty_score_arrays(alpha, beta, W: float = DEFAULT_PRIOR_WEIGHT, a: float = DEFAULT_BASE_RATE) -> dict[str, np.ndarray]:
    """All four novelty scores for an (n, K) batch of evidence.

    Returns a dict keyed by mechanism name ("PE", "NE", "PNE", "Belief"),
    each an array of length n.
    """
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    if alpha.shape != beta.shape:
        raise ValueError(f"shape mismatch: {alpha.shape} vs {beta.shape}")
    if np.any(alpha < 1.0) or np.any(beta < 1.0):
        raise ValueError("evidence must be >= 1 elementwise")
    K = alpha.shape[1]
    pe = 2.0 * stable_logistic(alpha.sum(axis=1) - K)
    # 2/(1 + exp(K - sum beta)) - 1, written as tanh to keep precision near 0
    ne = np.tanh(0.5 * (beta.sum(axis=1) - K))
    pne = 2.0 * K / (alpha + beta).sum(axis=1)

    b, _, _, _ = opinion_arrays(alpha, beta, W=W, a=a)
    b = np.clip(b, 0.0, 1.0)
    # left fold b1 * b2 * ... * bK
    combined = reduce(lambda acc, col: acc + col - acc * col, b.T, np.zeros(alpha.shape[0]))
    return {"PE": pe, "NE": ne, "PNE": pne, "Belief": 1.0 - combined}
