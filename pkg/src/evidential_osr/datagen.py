"""Synthetic multi-label actors for open-set evaluation.

Classes are split into three equal, disjoint subsets Z1, Z2, Z3.  Training
actors carry labels from Z1 u Z2.  Test actors carry labels from Z2 only
(known, novelty 0) or from Z3 only (novel, novelty 1), half each.

Each actor's feature vector is a content block followed by a context block.

* content = mean of the actor's class prototypes + N(0, noise_sigma^2)
* context = (mixed ? bias prototype of some class : 0) + N(0, context_noise^2),
  repeated over ``context_positions`` positions with independent noise.
  ``mixed`` is Bernoulli(bias_strength).  In training the class is one of the
  actor's own labels, so the context is a shortcut.  In testing it is drawn
  uniformly from all classes, independent of the labels.

The context block is laid out channel-major, so average pooling over
windows of ``context_positions`` consecutive columns recovers one value per
channel.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numerics import RandomStream

__all__ = [
    "GenConfig",
    "ActorSample",
    "Dataset",
    "generate_dataset",
    "label_cardinality_histogram",
    "save_dataset",
    "load_dataset",
]

FORMAT = "evidential-osr/dataset-v1"


@dataclass
class GenConfig:
    classes_per_subset: int = 6
    samples_train: int = 4000
    samples_test: int = 1000
    max_labels_per_actor: int = 3
    noise_sigma: float = 0.075
    bias_strength: float = 0.9
    content_dim: int = 128
    context_channels: int = 8
    context_positions: int = 2
    context_noise: float = 0.05
    seed: int = 0
    fixed_cardinality: int | None = None

    def validate(self) -> None:
        for name in ("classes_per_subset", "samples_train", "samples_test", "max_labels_per_actor",
                     "content_dim", "context_channels", "context_positions"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.samples_test < 2:
            raise ValueError("samples_test must be at least 2 (one known, one novel actor)")
        if not 0.0 <= self.bias_strength <= 1.0:
            raise ValueError(f"bias_strength must lie in [0, 1], got {self.bias_strength}")
        if self.noise_sigma < 0 or self.context_noise < 0:
            raise ValueError("noise levels must be nonnegative")
        if self.max_labels_per_actor > self.classes_per_subset:
            raise ValueError(
                f"max_labels_per_actor={self.max_labels_per_actor} exceeds the "
                f"{self.classes_per_subset} classes available to a test actor"
            )
        if self.fixed_cardinality is not None and not 1 <= self.fixed_cardinality <= self.classes_per_subset:
            raise ValueError("fixed_cardinality must lie in [1, classes_per_subset]")

    @property
    def n_classes(self) -> int:
        return 3 * self.classes_per_subset

    @property
    def d_in(self) -> int:
        return self.content_dim + self.context_channels * self.context_positions


@dataclass
class ActorSample:
    features: np.ndarray
    labels: np.ndarray  # multi-hot over all generated classes
    novelty: int
    split: str

    def to_record(self) -> dict:
        return {
            "features": [float(v) for v in self.features],
            "labels": [int(v) for v in self.labels],
            "novelty": int(self.novelty),
            "split": self.split,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ActorSample":
        return cls(
            features=np.asarray(rec["features"], dtype=float),
            labels=np.asarray(rec["labels"], dtype=int),
            novelty=int(rec["novelty"]),
            split=str(rec["split"]),
        )


@dataclass
class Dataset:
    train: list
    test: list
    metadata: dict = field(default_factory=dict)

    def arrays(self, split: str):
        """(features, labels, novelty) stacked for one split."""
        samples = self.train if split == "train" else self.test
        X = np.stack([s.features for s in samples])
        Y = np.stack([s.labels for s in samples])
        nov = np.array([s.novelty for s in samples], dtype=int)
        return X, Y, nov

    @property
    def known_classes(self) -> list:
        return self.metadata["known_classes"]

    @property
    def context_cols(self) -> list:
        return self.metadata["context_cols"]

    @property
    def pool_size(self) -> int:
        return self.metadata["pool_size"]


def _unit_rows(rng: RandomStream, n: int, d: int) -> np.ndarray:
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _draw_labels(rng: RandomStream, pool: np.ndarray, cfg: GenConfig) -> np.ndarray:
    if cfg.fixed_cardinality is not None:
        k = cfg.fixed_cardinality
    else:
        k = int(rng.integers(1, cfg.max_labels_per_actor + 1))
    return np.sort(rng.choice(pool, size=k, replace=False))


def _make_actor(rng, cfg, classes, content_protos, bias_protos, bias_class, split, novelty) -> ActorSample:
    content = content_protos[classes].mean(axis=0) + cfg.noise_sigma * rng.normal(size=cfg.content_dim)
    mixed = rng.random() < cfg.bias_strength
    base = bias_protos[bias_class] if mixed else np.zeros(cfg.context_channels)
    ctx = base[:, None] + cfg.context_noise * rng.normal(size=(cfg.context_channels, cfg.context_positions))
    labels = np.zeros(cfg.n_classes, dtype=int)
    labels[classes] = 1
    return ActorSample(np.concatenate([content, ctx.reshape(-1)]), labels, novelty, split)


def generate_dataset(config: GenConfig) -> Dataset:
    config.validate()
    c = config.classes_per_subset
    z1, z2, z3 = np.arange(0, c), np.arange(c, 2 * c), np.arange(2 * c, 3 * c)
    known = np.concatenate([z1, z2])
    root = RandomStream(config.seed)
    proto_rng, train_rng, test_rng = root.spawn(0), root.spawn(1), root.spawn(2)
    content_protos = _unit_rows(proto_rng, config.n_classes, config.content_dim)
    bias_protos = _unit_rows(proto_rng, config.n_classes, config.context_channels)

    train = []
    for _ in range(config.samples_train):
        classes = _draw_labels(train_rng, known, config)
        bias_class = int(train_rng.choice(classes))
        train.append(_make_actor(train_rng, config, classes, content_protos, bias_protos, bias_class, "train", 0))

    n_novel = config.samples_test // 2
    novelty_flags = np.array([0] * (config.samples_test - n_novel) + [1] * n_novel)
    novelty_flags = test_rng.permutation(novelty_flags)
    test = []
    for nov in novelty_flags:
        classes = _draw_labels(test_rng, z3 if nov else z2, config)
        bias_class = int(test_rng.integers(0, config.n_classes))
        test.append(_make_actor(test_rng, config, classes, content_protos, bias_protos, bias_class, "test", int(nov)))

    ctx_start = config.content_dim
    metadata = {
        "format": FORMAT,
        "config": asdict(config),
        "subsets": {"Z1": z1.tolist(), "Z2": z2.tolist(), "Z3": z3.tolist()},
        "known_classes": known.tolist(),
        "n_classes": config.n_classes,
        "content_cols": list(range(0, ctx_start)),
        "context_cols": list(range(ctx_start, config.d_in)),
        "pool_size": config.context_positions,
    }
    return Dataset(train, test, metadata)


def label_cardinality_histogram(samples) -> dict:
    """Number of actors per label-set size, as {cardinality: count} sorted by cardinality."""
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one sample")
    counts = Counter(int(np.sum(s.labels)) for s in samples)
    return dict(sorted(counts.items()))


def save_dataset(ds: Dataset, directory) -> tuple[Path, Path]:
    """Write ``dataset.jsonl`` (one actor per line) and ``dataset.meta.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data_path = directory / "dataset.jsonl"
    meta_path = directory / "dataset.meta.json"
    with open(data_path, "w", encoding="utf-8") as fh:
        for s in ds.train + ds.test:
            fh.write(json.dumps(s.to_record(), separators=(",", ":")) + "\n")
    meta_path.write_text(json.dumps(ds.metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return data_path, meta_path


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    meta = json.loads((directory / "dataset.meta.json").read_text(encoding="utf-8"))
    if meta.get("format") != FORMAT:
        raise ValueError(f"unsupported dataset format {meta.get('format')!r}")
    train, test = [], []
    with open(directory / "dataset.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                s = ActorSample.from_record(json.loads(line))
                (train if s.split == "train" else test).append(s)
    return Dataset(train, test, meta)
