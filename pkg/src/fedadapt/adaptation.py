"""Per-participant adaptation of a trained federated model.

Four strategies:
  ft  - retrain all parameters on the participant's data
  fb  - retrain only the output layer, base layers frozen
  mtl - retrain under a Fisher-weighted quadratic anchor to the federated model
  kd  - retrain against the federated model's temperature-softened logits
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import ParticipantData, plain_accuracy
from .errors import ConfigError, TrainingError
from .nn import (
    CROSS_ENTROPY,
    DistillLoss,
    EwcLoss,
    ModelState,
    SgdConfig,
    layer_slices,
    loss_and_grad,
)
from .training import LocalTrainConfig, local_train

FT = "ft"
FB = "fb"
MTL = "mtl"
KD = "kd"
STRATEGY_ORDER = (FT, FB, MTL, KD)  # also the tie-break order


@dataclass(frozen=True)
class AdaptationConfig:
    strategy: str
    epochs: int
    sgd: SgdConfig
    batch_size: int = 32
    lam: float = 5000.0  # mtl anchor weight
    alpha: float = 0.95  # kd cross-entropy weight
    temperature: float = 6.0  # kd softening
    shuffle_seed: int = 0
    # mtl: draw Fisher labels from the model's own predictions instead of the data
    fisher_model_labels: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGY_ORDER:
            raise ConfigError(
                f"strategy must be one of {STRATEGY_ORDER}, got {self.strategy!r}")
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")

    def train_config(self) -> LocalTrainConfig:
        return LocalTrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                                sgd=self.sgd, shuffle_seed=self.shuffle_seed)


def estimate_fisher_diag(
    model: ModelState,
    data: ParticipantData,
    sample_labels: bool = False,
    seed: int = 0,
) -> np.ndarray:
    """Diagonal Fisher estimate: mean squared per-example cross-entropy gradient.

    With sample_labels, each example's label is drawn from the model's own
    predictive distribution instead of taken from the data.
    """
    x, y = data.train
    if sample_labels:
        from .nn import forward_batch, softmax

        probs = softmax(forward_batch(model, x))
        rng = np.random.default_rng(seed)
        y = np.array([rng.choice(len(p), p=p) for p in probs])
    fisher = np.zeros_like(model.params)
    for i in range(len(y)):
        _, grad = loss_and_grad(model, x[i:i + 1], y[i:i + 1], CROSS_ENTROPY)
        fisher += grad * grad
    return fisher / len(y)


def output_layer_mask(model: ModelState) -> np.ndarray:
    """1.0 on the final layer's weights and bias, 0.0 elsewhere."""
    mask = np.zeros_like(model.params)
    mask[layer_slices(model.spec)[-1]] = 1.0
    return mask


def adapt(federated: ModelState, data: ParticipantData, cfg: AdaptationConfig) -> ModelState:
    """Run one adaptation strategy starting from the federated model."""
    train_cfg = cfg.train_config()
    try:
        if cfg.strategy == FT:
            return local_train(federated, data, train_cfg)
        if cfg.strategy == FB:
            return local_train(federated, data, train_cfg,
                               update_mask=output_layer_mask(federated))
        if cfg.strategy == MTL:
            fisher = estimate_fisher_diag(federated, data,
                                          sample_labels=cfg.fisher_model_labels,
                                          seed=cfg.shuffle_seed)
            loss = EwcLoss(cfg.lam, fisher, federated.params.copy())
            return local_train(federated, data, train_cfg, loss=loss)
        loss = DistillLoss(cfg.alpha, cfg.temperature, federated.copy())
        return local_train(federated, data, train_cfg, loss=loss)
    except TrainingError as exc:
        raise TrainingError(f"{cfg.strategy} adaptation diverged: {exc}",
                            epoch=exc.epoch, strategy=cfg.strategy) from exc


def best_adaptation(
    federated: ModelState,
    data: ParticipantData,
    configs: list[AdaptationConfig],
    score=None,
) -> tuple[ModelState, str, float]:
    """Adapt with every config and keep the best by participant test accuracy.

    Ties break toward the earlier strategy in STRATEGY_ORDER, then toward
    the earlier config.  Configs whose training diverges are skipped as
    long as at least one succeeds.  score overrides the default metric
    (plain accuracy on the participant's test split).
    """
    if not configs:
        raise ConfigError("need at least one adaptation config")
    if score is None:
        score = lambda model: plain_accuracy(model, *data.test)
    best = None
    failures = []
    for pos, cfg in enumerate(configs):
        try:
            model = adapt(federated, data, cfg)
        except TrainingError as exc:
            failures.append(exc)
            continue
        acc = score(model)
        key = (-acc, STRATEGY_ORDER.index(cfg.strategy), pos)
        if best is None or key < best[0]:
            best = (key, model, cfg.strategy, acc)
    if best is None:
        raise TrainingError(
            f"all adaptation strategies diverged: {[str(f) for f in failures]}")
    return best[1], best[2], best[3]
