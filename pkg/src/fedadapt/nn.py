"""Flat-parameter ReLU MLP with exact analytic gradients.

All parameters live in one float64 vector (weights row-major, then bias,
layer by layer).  That flat vector is the currency every other module
trades in: aggregation rules, clipping, coordinate medians, Fisher
diagonals and quadratic penalties all operate on it directly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigError, InputError, NumericError


@dataclass(frozen=True)
class ModelSpec:
    """Architecture: input_dim -> hidden_dims (ReLU) -> num_classes (linear)."""

    input_dim: int
    hidden_dims: tuple[int, ...] = ()
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden dims must all be >= 1, got {self.hidden_dims}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def param_count(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_dims)


def layer_slices(spec: ModelSpec) -> list[slice]:
    """Flat-vector extent (weights + bias) of each layer, first to last."""
    slices = []
    offset = 0
    for fan_in, fan_out in spec.layer_dims:
        size = fan_in * fan_out + fan_out
        slices.append(slice(offset, offset + size))
        offset += size
    return slices


@dataclass
class ModelState:
    """A spec plus its flat parameter vector."""

    spec: ModelSpec
    params: np.ndarray

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.spec.param_count,):
            raise InputError(
                f"params has shape {self.params.shape}, spec wants ({self.spec.param_count},)"
            )

    def copy(self) -> "ModelState":
        return ModelState(self.spec, self.params.copy())


# ---------------------------------------------------------------------------
# loss specifications

@dataclass(frozen=True)
class CrossEntropyLoss:
    """Plain softmax cross-entropy, mean over the batch."""


@dataclass(frozen=True)
class EwcLoss:
    """Cross-entropy plus a diagonal quadratic anchor penalty.

    loss = mean CE + sum_i (lam/2) * fisher_i * (theta_i - anchor_i)^2
    """

    lam: float
    fisher: np.ndarray
    anchor: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "fisher", np.asarray(self.fisher, dtype=np.float64))
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=np.float64))
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if np.any(self.fisher < 0):
            raise ConfigError("fisher coordinates must be nonnegative")
        if self.fisher.shape != self.anchor.shape:
            raise ConfigError("fisher and anchor must have equal length")


@dataclass(frozen=True)
class DistillLoss:
    """Temperature-softened distillation against a frozen teacher.

    loss = alpha * K^2 * mean CE
         + (1 - alpha) * mean_n KL(softmax(teacher/K) || softmax(student/K))
    """

    alpha: float
    temperature: float
    teacher: ModelState

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")


LossSpec = Union[CrossEntropyLoss, EwcLoss, DistillLoss]

CROSS_ENTROPY = CrossEntropyLoss()


# ---------------------------------------------------------------------------
# model construction and forward pass

def init_model(spec: ModelSpec, seed: int) -> ModelState:
    """Fresh model: weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    parts = []
    for fan_in, fan_out in spec.layer_dims:
        bound = 1.0 / np.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        parts.append(np.zeros(fan_out))
    return ModelState(spec, np.concatenate(parts))


def _unpack(spec: ModelSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    # (W, b) views into the flat vector, no copies
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_dims:
        w = params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset:offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def _forward(spec: ModelSpec, params: np.ndarray, x: np.ndarray):
    """Logits plus the caches backward needs: post-activation inputs per layer."""
    layers = _unpack(spec, params)
    activations = [x]
    h = x
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
        activations.append(h)
    w_out, b_out = layers[-1]
    logits = h @ w_out + b_out
    return logits, activations


def forward_batch(model: ModelState, x: np.ndarray) -> np.ndarray:
    """Pre-softmax logits for a batch, shape (n, num_classes)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.spec.input_dim:
        raise InputError(
            f"batch has shape {x.shape}, expected (n, {model.spec.input_dim})"
        )
    logits, _ = _forward(model.spec, model.params, x)
    return logits


def forward_logits(model: ModelState, x: np.ndarray) -> np.ndarray:
    """Pre-softmax logits for one input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.spec.input_dim,):
        raise InputError(f"input has shape {x.shape}, expected ({model.spec.input_dim},)")
    return forward_batch(model, x[None, :])[0]


def _backward(spec, params, activations, d_logits) -> np.ndarray:
    """Parameter gradient given the gradient at the logits."""
    layers = _unpack(spec, params)
    grads = [None] * len(layers)
    delta = d_logits
    for idx in range(len(layers) - 1, -1, -1):
        w, _ = layers[idx]
        h_in = activations[idx]
        grads[idx] = (h_in.T @ delta, delta.sum(axis=0))
        if idx > 0:
            # ReLU mask: activations[idx] is max(z, 0), so >0 marks live units
            delta = (delta @ w.T) * (activations[idx] > 0.0)
    flat = []
    for gw, gb in grads:
        flat.append(gw.ravel())
        flat.append(gb)
    return np.concatenate(flat)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


def _check_labels(y: np.ndarray, num_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.size == 0:
        raise InputError("batch must be non-empty")
    if not np.issubdtype(y.dtype, np.integer):
        y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= num_classes:
        raise InputError(f"labels must lie in [0, {num_classes}), got range "
                         f"[{y.min()}, {y.max()}]")
    return y


def loss_and_grad(
    model: ModelState,
    x: np.ndarray,
    y: np.ndarray,
    loss: LossSpec = CROSS_ENTROPY,
) -> tuple[float, np.ndarray]:
    """Mean batch loss and its exact gradient w.r.t. the flat parameters."""
    spec = model.spec
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise InputError(f"batch has shape {x.shape}, expected (n, {spec.input_dim})")
    y = _check_labels(y, spec.num_classes)
    n = x.shape[0]

    # divergence policy: let overflow produce inf silently, then raise
    # NumericError from the finite check at the end
    with np.errstate(all="ignore"):
        return _loss_and_grad(model, x, y, loss, n)


def _loss_and_grad(model, x, y, loss, n):
    spec = model.spec
    logits, activations = _forward(spec, model.params, x)
    log_probs = _log_softmax(logits)
    ce = -log_probs[np.arange(n), y].mean()
    d_logits = np.exp(log_probs)
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n

    if isinstance(loss, CrossEntropyLoss):
        total = ce
    elif isinstance(loss, EwcLoss):
        if len(loss.fisher) != spec.param_count:
            raise InputError(
                f"fisher/anchor length {len(loss.fisher)} != param count {spec.param_count}"
            )
        total = ce
        # lam == 0 leaves the cross-entropy path bit-identical
        if loss.lam != 0.0:
            diff = model.params - loss.anchor
            total = ce + 0.5 * loss.lam * float(np.sum(loss.fisher * diff * diff))
    elif isinstance(loss, DistillLoss):
        if loss.teacher.spec != spec:
            raise InputError("teacher spec must match the student spec")
        k = loss.temperature
        scale = loss.alpha * k * k
        total = scale * ce
        d_logits = scale * d_logits
        if loss.alpha != 1.0:
            teacher_logits, _ = _forward(spec, loss.teacher.params, x)
            p = softmax(teacher_logits / k)
            q_log = _log_softmax(logits / k)
            p_log = np.where(p > 0.0, np.log(np.maximum(p, 1e-323)), 0.0)
            kl = float((p * (p_log - q_log)).sum(axis=1).mean())
            total = total + (1.0 - loss.alpha) * kl
            d_logits = d_logits + (1.0 - loss.alpha) * (np.exp(q_log) - p) / (k * n)
    else:
        raise InputError(f"unknown loss spec {loss!r}")

    grad = _backward(spec, model.params, activations, d_logits)
    if isinstance(loss, EwcLoss) and loss.lam != 0.0:
        grad = grad + loss.lam * loss.fisher * (model.params - loss.anchor)

    if not np.isfinite(total) or not np.all(np.isfinite(grad)):
        raise NumericError("non-finite loss or gradient")
    return float(total), grad


# ---------------------------------------------------------------------------
# optimizer

@dataclass(frozen=True)
class SgdConfig:
    """SGD with classic momentum and coupled weight decay."""

    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.lr) or self.lr < 0:
            raise ConfigError(f"lr must be finite and >= 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")


def sgd_step(
    model: ModelState,
    grad: np.ndarray,
    cfg: SgdConfig,
    momentum_buf: np.ndarray,
) -> tuple[ModelState, np.ndarray]:
    """buf' = mu*buf + grad + wd*params;  params' = params - lr*buf'."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != model.params.shape or momentum_buf.shape != model.params.shape:
        raise InputError("grad and momentum buffer must match the param count")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient")
    buf = cfg.momentum * momentum_buf + grad
    if cfg.weight_decay != 0.0:
        buf = buf + cfg.weight_decay * model.params
    params = model.params - cfg.lr * buf
    return ModelState(model.spec, params), buf
