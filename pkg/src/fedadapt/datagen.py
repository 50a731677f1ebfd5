"""Synthetic non-iid classification task and per-participant accuracy metrics.

The task is a mixture of unit-variance Gaussian blobs, one per class, with
class means placed on random directions at radius ``class_separation`` from
the origin.  Each participant draws its own class-proportion vector from a
symmetric Dirichlet and (optionally) its own perturbation of the class
means, which creates "head/tail" participants whose data the consensus
model fits poorly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, EvaluationError, InputError
from .nn import ModelState, forward_batch


@dataclass(frozen=True)
class TaskConfig:
    num_classes: int
    input_dim: int
    pool_size: int
    dirichlet_alpha: float
    samples_min: int
    samples_max: int
    class_separation: float
    seed: int
    train_ratio: float = 0.9
    # per-participant zero-mean Gaussian shift of the class means;
    # 0 keeps every participant on the global distribution
    participant_spread: float = 0.0
    # "fixed": every participant shifts at the same scale;
    # "exponential": scale is participant_spread times an Exponential(1)
    # draw, so most participants stay near the population and a minority
    # become strong outliers
    spread_profile: str = "fixed"
    # "random": class means on random directions (dense features, every
    # coordinate carries every class);
    # "axis": each class owns a block of coordinates, so the signal for a
    # class lives only in participants that hold that class
    mean_geometry: str = "random"
    # probability a label is resampled uniformly; raises the Bayes error of
    # the task, which compresses the local-vs-federated accuracy margins
    label_noise: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.label_noise < 1.0:
            raise ConfigError(f"label_noise must be in [0, 1), got {self.label_noise}")
        if self.spread_profile not in ("fixed", "exponential"):
            raise ConfigError(
                f"spread_profile must be 'fixed' or 'exponential', got {self.spread_profile!r}")
        if self.mean_geometry not in ("random", "axis"):
            raise ConfigError(
                f"mean_geometry must be 'random' or 'axis', got {self.mean_geometry!r}")
        if self.mean_geometry == "axis" and self.input_dim < self.num_classes:
            raise ConfigError("axis geometry needs input_dim >= num_classes")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.pool_size < 1:
            raise ConfigError(f"pool_size must be >= 1, got {self.pool_size}")
        if self.samples_min > self.samples_max:
            raise ConfigError("samples_min must be <= samples_max")
        if self.samples_min < 10:
            raise ConfigError("samples_min must be >= 10 so the 9:1 split is valid")
        if not self.dirichlet_alpha > 0:
            raise ConfigError(f"dirichlet_alpha must be > 0, got {self.dirichlet_alpha}")
        if not self.class_separation > 0:
            raise ConfigError(f"class_separation must be > 0, got {self.class_separation}")
        if not 0.0 < self.train_ratio < 1.0:
            raise ConfigError(f"train_ratio must be in (0, 1), got {self.train_ratio}")
        if self.participant_spread < 0:
            raise ConfigError("participant_spread must be >= 0")


@dataclass
class ParticipantData:
    """One participant's labeled train/test arrays plus class-ratio metadata."""

    id: int
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    class_ratios: np.ndarray = field(init=False)
    num_classes: int = 0

    def __post_init__(self):
        if self.train_y.size == 0 or self.test_y.size == 0:
            raise InputError("train and test must be non-empty")
        counts = np.bincount(self.train_y, minlength=self.num_classes).astype(np.float64)
        self.class_ratios = counts / counts.sum()

    @property
    def train(self):
        return self.train_x, self.train_y

    @property
    def test(self):
        return self.test_x, self.test_y

    @property
    def size(self) -> int:
        return int(self.train_y.size + self.test_y.size)


@dataclass
class SyntheticTask:
    cfg: TaskConfig
    class_means: np.ndarray  # (num_classes, input_dim)
    participants: list[ParticipantData]

    def sample_balanced_test(self, per_class: int, seed: int):
        """Fresh class-balanced holdout from the global blob distribution."""
        rng = np.random.default_rng(seed)
        c, d = self.class_means.shape
        x = np.concatenate(
            [self.class_means[k] + rng.standard_normal((per_class, d)) for k in range(c)]
        )
        y = np.repeat(np.arange(c), per_class)
        return x, y


def split_in_order(x: np.ndarray, y: np.ndarray, ratio: float):
    """First ceil(ratio*N) samples to train, the rest to test, no shuffling."""
    n = len(y)
    if n < 10:
        raise InputError(f"need at least 10 samples to split, got {n}")
    if not 0.0 < ratio < 1.0:
        raise InputError(f"ratio must be in (0, 1), got {ratio}")
    cut = math.ceil(ratio * n)
    if cut >= n:
        raise InputError(f"split ratio {ratio} leaves an empty test set for n={n}")
    return (x[:cut], y[:cut]), (x[cut:], y[cut:])


def generate_task(cfg: TaskConfig) -> SyntheticTask:
    """Build the class generators and the participant pool, all from cfg.seed."""
    root = np.random.SeedSequence(cfg.seed)
    means_seq, *participant_seqs = root.spawn(cfg.pool_size + 1)

    rng = np.random.default_rng(means_seq)
    if cfg.mean_geometry == "axis":
        # class c occupies its own contiguous block of coordinates; any
        # leftover dimensions carry no class signal
        block = cfg.input_dim // cfg.num_classes
        directions = np.zeros((cfg.num_classes, cfg.input_dim))
        for c in range(cfg.num_classes):
            v = rng.normal(size=block)
            directions[c, c * block:(c + 1) * block] = v / np.linalg.norm(v)
    else:
        directions = rng.normal(size=(cfg.num_classes, cfg.input_dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    class_means = directions * cfg.class_separation

    participants = []
    for pid, seq in enumerate(participant_seqs):
        rng = np.random.default_rng(seq)
        proportions = rng.dirichlet(np.full(cfg.num_classes, cfg.dirichlet_alpha))
        n = int(rng.integers(cfg.samples_min, cfg.samples_max + 1))
        labels = rng.choice(cfg.num_classes, size=n, p=proportions)
        means = class_means
        if cfg.participant_spread > 0:
            scale = cfg.participant_spread
            if cfg.spread_profile == "exponential":
                scale = scale * rng.exponential(1.0)
            means = class_means + rng.normal(scale=scale, size=class_means.shape)
        x = means[labels] + rng.standard_normal((n, cfg.input_dim))
        if cfg.label_noise > 0:
            flip = rng.random(n) < cfg.label_noise
            labels = labels.copy()
            labels[flip] = rng.integers(0, cfg.num_classes, int(flip.sum()))
        (train_x, train_y), (test_x, test_y) = split_in_order(x, labels, cfg.train_ratio)
        participants.append(
            ParticipantData(pid, train_x, train_y, test_x, test_y,
                            num_classes=cfg.num_classes)
        )
    return SyntheticTask(cfg, class_means, participants)


# ---------------------------------------------------------------------------
# accuracy metrics

def plain_accuracy(model: ModelState, x: np.ndarray, y: np.ndarray) -> float:
    """Fraction of argmax-correct predictions; argmax ties go to the lowest class."""
    y = np.asarray(y)
    if y.size == 0:
        raise InputError("test set must be non-empty")
    preds = np.argmax(forward_batch(model, x), axis=1)
    return float(np.mean(preds == y))


def weighted_accuracy(model: ModelState, x: np.ndarray, y: np.ndarray,
                      class_ratios: np.ndarray) -> float:
    """Per-class accuracy on a shared test set, weighted by the given class ratios."""
    y = np.asarray(y)
    class_ratios = np.asarray(class_ratios, dtype=np.float64)
    if y.size == 0:
        raise InputError("test set must be non-empty")
    preds = np.argmax(forward_batch(model, x), axis=1)
    total = 0.0
    for c, ratio in enumerate(class_ratios):
        if ratio <= 0.0:
            continue
        mask = y == c
        if not mask.any():
            raise EvaluationError(f"class {c} has ratio {ratio} but no test examples")
        total += ratio * float(np.mean(preds[mask] == c))
    return total


def class_entropy_effective(class_ratios: np.ndarray) -> float:
    """exp of the Shannon entropy: the effective number of classes in play."""
    p = np.asarray(class_ratios, dtype=np.float64)
    p = p[p > 0]
    return float(np.exp(-(p * np.log(p)).sum()))


# ---------------------------------------------------------------------------
# pool serialization: one record per example,
# participant_id,split_tag,label,feature,feature,...

def save_pool(path, participants: list[ParticipantData]) -> None:
    lines = []
    for p in participants:
        for tag, (x, y) in (("train", p.train), ("test", p.test)):
            for row, label in zip(x, y):
                feats = ",".join(repr(float(v)) for v in row)
                lines.append(f"{p.id},{tag},{int(label)},{feats}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_pool(path, num_classes: int) -> list[ParticipantData]:
    buckets: dict[int, dict[str, list]] = {}
    order: list[int] = []
    for line in Path(path).read_text().splitlines():
        if not line:
            continue
        pid_s, tag, label_s, *feats = line.split(",")
        pid = int(pid_s)
        if pid not in buckets:
            buckets[pid] = {"train": [], "test": []}
            order.append(pid)
        buckets[pid][tag].append((int(label_s), [float(v) for v in feats]))
    participants = []
    for pid in order:
        splits = {}
        for tag in ("train", "test"):
            rows = buckets[pid][tag]
            splits[tag] = (
                np.array([r[1] for r in rows], dtype=np.float64),
                np.array([r[0] for r in rows], dtype=np.int64),
            )
        participants.append(
            ParticipantData(pid, *splits["train"], *splits["test"], num_classes=num_classes)
        )
    return participants
