"""Feed-forward evidential network and its constrained training loop.

The network maps actor features to 2K outputs.  The first K pass through
the evidence function to give alpha - 1, the last K give beta - 1.  Hidden
layers use tanh so the whole map is smooth and finite differences behave.

The training objective on a minibatch is

    L(theta, lam) = BetaLoss + lam * (HSIC(Z, pool(X_ctx)) - gamma) - delta/2 * lam^2

with Z the raw 2K-dim output matrix.  HSIC bandwidths are set per batch by
the median heuristic and held fixed when differentiating.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .beta_evidential import beta_loss, beta_loss_grad, check_labels
from .hsic import hsic, hsic_grad, median_bandwidth, pool_context
from .numerics import RandomStream, softplus, softplus_grad
from .optimizer import (
    DivergenceError,
    DualState,
    NonFiniteError,
    adam_update,
    algorithm1_step,
    init_primal,
    lagrangian_grad,
)
from .subjective_logic import EvidencePair

__all__ = [
    "Architecture",
    "NetworkParams",
    "ForwardResult",
    "StaleCacheError",
    "init_params",
    "forward",
    "backward",
    "objective",
    "batch_value_grads",
    "save_checkpoint",
    "load_checkpoint",
    "TrainConfig",
    "TrainTrace",
    "train",
]

CHECKPOINT_FORMAT = "evidential-osr/checkpoint-v1"
EVIDENCE_FUNCTIONS = ("softplus", "relu")


class StaleCacheError(RuntimeError):
    """backward() was handed a forward result computed with different params."""


@dataclass(frozen=True)
class Architecture:
    d_in: int = 32
    hidden: tuple = (64, 64)
    K: int = 6
    evidence: str = "softplus"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.d_in < 1 or self.K < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer widths must be positive")
        if self.evidence not in EVIDENCE_FUNCTIONS:
            raise ValueError(f"evidence must be one of {EVIDENCE_FUNCTIONS}, got {self.evidence!r}")

    @property
    def widths(self) -> tuple:
        return (self.d_in, *self.hidden, 2 * self.K)

    @property
    def shapes(self) -> list:
        w = self.widths
        return [(w[i], w[i + 1]) for i in range(len(w) - 1)]

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in self.shapes)


@dataclass
class NetworkParams:
    arch: Architecture
    weights: list
    biases: list

    def __post_init__(self):
        shapes = self.arch.shapes
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise ValueError("layer count does not match the architecture")
        for W, b, (fi, fo) in zip(self.weights, self.biases, shapes):
            if W.shape != (fi, fo) or b.shape != (fo,):
                raise ValueError(f"layer shape {W.shape}/{b.shape} does not match ({fi}, {fo})")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise NonFiniteError("network parameters must be finite")

    def flatten(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.reshape(-1))
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def unflatten(cls, arch: Architecture, flat) -> "NetworkParams":
        flat = np.asarray(flat, dtype=float).reshape(-1)
        if flat.size != arch.n_params:
            raise ValueError(f"expected {arch.n_params} parameters, got {flat.size}")
        weights, biases, pos = [], [], 0
        for fi, fo in arch.shapes:
            weights.append(flat[pos:pos + fi * fo].reshape(fi, fo).copy())
            pos += fi * fo
            biases.append(flat[pos:pos + fo].copy())
            pos += fo
        return cls(arch, weights, biases)

    def fingerprint(self) -> str:
        return hashlib.blake2b(self.flatten().tobytes(), digest_size=16).hexdigest()


def init_params(arch: Architecture, rng: RandomStream) -> NetworkParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fi, fo in arch.shapes:
        limit = math.sqrt(6.0 / (fi + fo))
        weights.append(rng.uniform(-limit, limit, size=(fi, fo)))
        biases.append(np.zeros(fo))
    return NetworkParams(arch, weights, biases)


def _evidence(kind: str, x: np.ndarray) -> np.ndarray:
    return softplus(x) if kind == "softplus" else np.maximum(x, 0.0)


def _evidence_grad(kind: str, x: np.ndarray) -> np.ndarray:
    return softplus_grad(x) if kind == "softplus" else (x > 0).astype(float)


@dataclass
class ForwardResult:
    alpha: np.ndarray
    beta: np.ndarray
    z_matrix: np.ndarray
    pooled_context: np.ndarray
    activations: list = field(repr=False)
    fingerprint: str = ""

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    def evidence(self, j: int) -> EvidencePair:
        return EvidencePair(self.alpha[j], self.beta[j])


def _batch_fingerprint(params: NetworkParams, features: np.ndarray) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(params.flatten().tobytes())
    h.update(np.ascontiguousarray(features).tobytes())
    return h.hexdigest()


def forward(params: NetworkParams, features, context_cols: Sequence[int], pool_size: int = 1) -> ForwardResult:
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.arch.d_in:
        raise ValueError(f"features must be n x {params.arch.d_in}, got shape {X.shape}")
    pooled = pool_context(X, context_cols, pool_size)
    acts = [X]
    h = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ W + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    K = params.arch.K
    ev = _evidence(params.arch.evidence, h)
    return ForwardResult(
        alpha=ev[:, :K] + 1.0,
        beta=ev[:, K:] + 1.0,
        z_matrix=h,
        pooled_context=pooled,
        activations=acts,
        fingerprint=_batch_fingerprint(params, X),
    )


def _backprop(params: NetworkParams, fr: ForwardResult, d_out: np.ndarray) -> np.ndarray:
    grads_w, grads_b = [], []
    delta = d_out
    for i in range(len(params.weights) - 1, -1, -1):
        a_in = fr.activations[i]
        grads_w.append(a_in.T @ delta)
        grads_b.append(delta.sum(axis=0))
        if i > 0:
            delta = (delta @ params.weights[i].T) * (1.0 - fr.activations[i] ** 2)
    parts = []
    for gw, gb in zip(reversed(grads_w), reversed(grads_b)):
        parts.append(gw.reshape(-1))
        parts.append(gb)
    return np.concatenate(parts)


def _check_batch(params: NetworkParams, fr: ForwardResult, y) -> np.ndarray:
    if _batch_fingerprint(params, fr.activations[0]) != fr.fingerprint:
        raise StaleCacheError("forward result does not belong to these parameters")
    y = check_labels(y)
    if y.shape != fr.alpha.shape:
        raise ValueError(f"labels must be {fr.alpha.shape}, got {y.shape}")
    return y


def _bandwidths(fr: ForwardResult, bandwidths) -> tuple:
    if bandwidths is not None:
        return tuple(bandwidths)
    return median_bandwidth(fr.z_matrix), median_bandwidth(fr.pooled_context)


def _loss_output_grad(params, fr, y, reduction):
    d_alpha, d_beta = beta_loss_grad(fr.alpha, fr.beta, y, reduction)
    return np.concatenate([d_alpha, d_beta], axis=1) * _evidence_grad(params.arch.evidence, fr.z_matrix)


def backward(
    params: NetworkParams,
    fr: ForwardResult,
    y,
    lam: float,
    gamma: float = 0.0,
    delta: float = 0.0,
    reduction: str = "sum",
    bandwidths: Optional[tuple] = None,
) -> np.ndarray:
    """Gradient of the batch Lagrangian with respect to the flattened parameters.

    ``gamma`` and ``delta`` shift the objective by terms constant in the
    parameters, so they do not enter the gradient; they are accepted to keep
    the signature aligned with :func:`objective`.
    """
    y = _check_batch(params, fr, y)
    d_out = _loss_output_grad(params, fr, y, reduction)
    if lam != 0.0:
        bz, bx = _bandwidths(fr, bandwidths)
        d_out = d_out + lam * hsic_grad(fr.z_matrix, fr.pooled_context, bz, bx)
    return _backprop(params, fr, d_out)


def objective(
    params: NetworkParams,
    features,
    y,
    context_cols,
    lam: float,
    gamma: float = 0.0,
    delta: float = 0.0,
    pool_size: int = 1,
    reduction: str = "sum",
    bandwidths: Optional[tuple] = None,
) -> float:
    fr = forward(params, features, context_cols, pool_size)
    y = check_labels(y)
    value = beta_loss(fr.alpha, fr.beta, y, reduction).total
    if lam != 0.0 or gamma != 0.0:
        bz, bx = _bandwidths(fr, bandwidths)
        value += lam * (hsic(fr.z_matrix, fr.pooled_context, bz, bx, clamp=False) - gamma)
    return value - 0.5 * delta * lam * lam


def batch_value_grads(arch: Architecture, features, y, context_cols, pool_size: int = 1, reduction: str = "mean"):
    """(loss_fn, constraint_fn) over flat parameter vectors for one minibatch.

    Each maps theta to ``(value, gradient)`` as the optimizer expects.  The
    last forward pass is memoised so evaluating both at one theta costs one
    pass.
    """
    y = check_labels(y)
    memo = {}

    def run(theta):
        key = np.asarray(theta).tobytes()
        if memo.get("key") != key:
            params = NetworkParams.unflatten(arch, theta)
            memo.clear()
            memo.update(key=key, params=params, fr=forward(params, features, context_cols, pool_size))
        return memo["params"], memo["fr"]

    def loss_fn(theta):
        params, fr = run(theta)
        value = beta_loss(fr.alpha, fr.beta, y, reduction).total
        return value, _backprop(params, fr, _loss_output_grad(params, fr, y, reduction))

    def constraint_fn(theta):
        params, fr = run(theta)
        value = hsic(fr.z_matrix, fr.pooled_context)
        return value, _backprop(params, fr, hsic_grad(fr.z_matrix, fr.pooled_context))

    return loss_fn, constraint_fn


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(params: NetworkParams, path, config_echo: Optional[dict] = None) -> Path:
    path = Path(path)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "architecture": {**asdict(params.arch), "hidden": list(params.arch.hidden)},
        # repr of a Python float round-trips exactly
        "weights": [repr(float(v)) for v in params.flatten()],
        "config": config_echo or {},
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> tuple[NetworkParams, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    arch = Architecture(**doc["architecture"])
    flat = np.array([float(v) for v in doc["weights"]])
    return NetworkParams.unflatten(arch, flat), doc.get("config", {})


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    """Hyperparameters for :func:`train`.

    One outer iteration runs ``steps_per_dual`` Adam minibatch steps on the
    Lagrangian at fixed lambda; the last of them is a full averaging step
    (commit to the running average, optional reset, dual update evaluated at
    the average on that minibatch).  ``steps_per_dual=None`` means one epoch.
    """

    epochs: int = 20
    batch_size: int = 128
    eta1: float = 1e-2
    eta2: float = 1000.0
    delta: float = 1e-5
    gamma: float = 0.001
    lambda0: float = 0.0
    debias: bool = True
    steps_per_dual: Optional[int] = None
    reset: bool = True
    average_mode: str = "proper"
    reduction: str = "mean"
    hidden: tuple = (64,)
    evidence: str = "softplus"
    max_steps: Optional[int] = None

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("epochs must be >= 1 and batch_size >= 2")
        if not (self.eta1 > 0 and self.eta2 > 0):
            raise ValueError("step sizes must be positive")
        if self.delta < 0 or self.gamma < 0 or self.lambda0 < 0:
            raise ValueError("delta, gamma and lambda0 must be nonnegative")
        if self.steps_per_dual is not None and self.steps_per_dual < 1:
            raise ValueError("steps_per_dual must be positive")
        if self.reduction not in ("sum", "mean"):
            raise ValueError(f"unknown reduction {self.reduction!r}")
        if self.evidence not in EVIDENCE_FUNCTIONS:
            raise ValueError(f"unknown evidence function {self.evidence!r}")


@dataclass
class TrainTrace:
    """One row per outer iteration; row 0 is the initial state.

    ``loss`` and ``hsic`` are evaluated at the running average on the
    minibatch that closed the iteration.
    """

    step: list = field(default_factory=list)
    minibatch_steps: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    hsic: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    min_evidence: list = field(default_factory=list)

    def append(self, step, mb, loss, g, lam, min_ev):
        self.step.append(int(step))
        self.minibatch_steps.append(int(mb))
        self.loss.append(float(loss))
        self.hsic.append(float(g))
        self.lam.append(float(lam))
        self.min_evidence.append(float(min_ev))

    def to_csv(self, header_lines: Sequence[str] = ()) -> str:
        lines = [f"# {h}" for h in header_lines]
        lines.append("step,minibatch_steps,loss,hsic,lambda,min_evidence")
        for row in zip(self.step, self.minibatch_steps, self.loss, self.hsic, self.lam, self.min_evidence):
            lines.append(",".join([str(row[0]), str(row[1])] + [repr(v) for v in row[2:]]))
        return "\n".join(lines) + "\n"


def _batches(n: int, batch_size: int, rng: RandomStream):
    order = rng.permutation(n)
    # drop a trailing batch too small for HSIC
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if idx.size >= 2:
            yield np.sort(idx)


def train(config: TrainConfig, dataset, rng: RandomStream, params0: Optional[NetworkParams] = None):
    """Train on ``dataset.train`` with the primal-dual averaging scheme.

    Labels are restricted to the known classes.  With ``debias=False`` the
    multiplier stays frozen at ``lambda0`` (0 by default) and the dual step
    is skipped.  Returns ``(params, trace)`` with params set to the final
    running average.
    """
    config.validate()
    X, Y, _ = dataset.arrays("train")
    known = np.asarray(dataset.known_classes)
    Y = Y[:, known]
    ctx, pool = dataset.context_cols, dataset.pool_size
    arch = Architecture(d_in=X.shape[1], hidden=tuple(config.hidden), K=known.size, evidence=config.evidence)
    init_rng, batch_rng = rng.spawn(0), rng.spawn(1)
    params = params0 if params0 is not None else init_params(arch, init_rng)
    if params.arch != arch:
        raise ValueError("initial parameters do not match the dataset architecture")

    primal = init_primal(params.flatten(), keep_history=False, average_mode=config.average_mode)
    dual = DualState(lam=config.lambda0, eta2=config.eta2, delta=config.delta, gamma=config.gamma)
    scale = max(1.0, float(np.max(np.abs(primal.theta))))
    trace = TrainTrace()

    def record(step, mb, theta, idx, lam):
        loss_fn, constraint_fn = batch_value_grads(arch, X[idx], Y[idx], ctx, pool, config.reduction)
        fr = forward(NetworkParams.unflatten(arch, theta), X[idx], ctx, pool)
        trace.append(step, mb, loss_fn(theta)[0], constraint_fn(theta)[0], lam,
                     min(fr.alpha.min(), fr.beta.min()))

    def iter_batches():
        for _ in range(config.epochs):
            yield from _batches(X.shape[0], config.batch_size, batch_rng)

    batches = list(iter_batches())
    if config.max_steps is not None:
        batches = batches[: config.max_steps]
    n = X.shape[0]
    per_epoch = sum(1 for s in range(0, n, config.batch_size) if min(config.batch_size, n - s) >= 2)
    inner = config.steps_per_dual or per_epoch

    record(0, 0, primal.average, batches[0], dual.lam)
    outer = 0
    for b, idx in enumerate(batches, start=1):
        loss_fn, constraint_fn = batch_value_grads(arch, X[idx], Y[idx], ctx, pool, config.reduction)
        closes = b % inner == 0 or b == len(batches)
        if closes:
            new_primal, new_dual = algorithm1_step(
                primal, dual, loss_fn, constraint_fn, eta1=config.eta1, primal_mode="adam", reset=config.reset
            )
            primal = new_primal
            if config.debias:
                dual = new_dual
            outer += 1
            record(outer, b, primal.average, idx, dual.lam)
        else:
            grad = lagrangian_grad(primal.theta, dual.lam, loss_fn, constraint_fn)
            if not np.all(np.isfinite(grad)):
                raise NonFiniteError(f"Lagrangian gradient is not finite at minibatch step {b}")
            primal.theta = adam_update(primal.theta, grad, primal.adam, config.eta1)
        if not np.all(np.isfinite(primal.theta)):
            raise NonFiniteError(f"parameters became non-finite at minibatch step {b}")
        if np.max(np.abs(primal.theta)) > 1e6 * scale:
            raise DivergenceError(f"parameters diverged at minibatch step {b}")

    return NetworkParams.unflatten(arch, primal.average), trace
