"""Mini-batch SGD on one participant's data, plus the from-scratch baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import ParticipantData
from .errors import ConfigError, NumericError, TrainingError
from .nn import (
    CROSS_ENTROPY,
    LossSpec,
    ModelSpec,
    ModelState,
    SgdConfig,
    init_model,
    loss_and_grad,
    sgd_step,
)


@dataclass(frozen=True)
class LocalTrainConfig:
    epochs: int
    batch_size: int
    sgd: SgdConfig
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


def local_train(
    global_model: ModelState,
    data: ParticipantData,
    cfg: LocalTrainConfig,
    loss: LossSpec = CROSS_ENTROPY,
    update_mask: np.ndarray | None = None,
) -> ModelState:
    """Copy the global model and run cfg.epochs of mini-batch SGD on data.train.

    Batch order is reshuffled every epoch from cfg.shuffle_seed; the last
    partial batch is kept.  With update_mask given, coordinates where the
    mask is 0 are left bit-identical (no gradient, decay or momentum).
    The input model is never mutated.
    """
    x, y = data.train
    state = global_model.copy()
    buf = np.zeros_like(state.params)
    if update_mask is not None:
        update_mask = np.asarray(update_mask, dtype=np.float64)
        frozen = update_mask == 0.0
    rng = np.random.default_rng(cfg.shuffle_seed)
    n = len(y)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                _, grad = loss_and_grad(state, x[idx], y[idx], loss)
            except NumericError as exc:
                raise TrainingError(f"training diverged in epoch {epoch}",
                                    epoch=epoch) from exc
            if update_mask is None:
                state, buf = sgd_step(state, grad, cfg.sgd, buf)
            else:
                before = state.params
                state, buf = sgd_step(state, grad * update_mask, cfg.sgd, buf)
                state.params[frozen] = before[frozen]
                buf[frozen] = 0.0
    return state


def train_local_baseline(
    spec: ModelSpec,
    data: ParticipantData,
    cfg: LocalTrainConfig,
    init_seed: int,
) -> ModelState:
    """Train a model from a fresh random init on this participant's data alone."""
    return local_train(init_model(spec, init_seed), data, cfg)
