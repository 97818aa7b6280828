"""Multi-label evidential learning for open-set recognition.

Beta evidence per class, subjective-logic novelty scores, an HSIC
independence constraint, and a primal-dual averaging optimizer, plus a
synthetic benchmark to exercise them together.
"""

from .beta_evidential import beta_loss, beta_loss_grad, dirichlet_binary_loss
from .hsic import hsic, hsic_grad
from .metrics import ScoredSet, binary_curve_metrics, mean_ap
from .numerics import RandomStream, digamma, trigamma
from .subjective_logic import EvidencePair, Opinion, novelty_scores, opinion_from_evidence

__version__ = "0.1.0"

__all__ = [
    "beta_loss",
    "beta_loss_grad",
    "dirichlet_binary_loss",
    "hsic",
    "hsic_grad",
    "ScoredSet",
    "binary_curve_metrics",
    "mean_ap",
    "RandomStream",
    "digamma",
    "trigamma",
    "EvidencePair",
    "Opinion",
    "novelty_scores",
    "opinion_from_evidence",
]
