"""Server-side update aggregation: averaging, clipped+noised, coordinate median.

Also provides the scaled model-replacement update a malicious participant
can submit to steer averaging-based aggregation to an arbitrary target.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

AVG = "avg"
DP = "dp"
MEDIAN = "median"
STRATEGIES = (AVG, DP, MEDIAN)


@dataclass(frozen=True)
class AggregationConfig:
    strategy: str
    eta: float = 1.0
    clip_bound: float | None = None  # dp only
    noise_sigma: float | None = None  # dp only

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not self.eta > 0:
            raise ConfigError(f"eta must be > 0, got {self.eta}")
        if self.strategy == DP:
            if self.clip_bound is None or not self.clip_bound > 0:
                raise ConfigError("dp aggregation needs clip_bound > 0")
            if self.noise_sigma is None or self.noise_sigma < 0:
                raise ConfigError("dp aggregation needs noise_sigma >= 0")


@dataclass(frozen=True)
class LocalUpdate:
    participant_id: int
    params: np.ndarray


def clip_update(delta: np.ndarray, bound: float) -> np.ndarray:
    """Scale delta to L2 norm <= bound, preserving direction."""
    if not bound > 0:
        raise InputError(f"clip bound must be > 0, got {bound}")
    norm = float(np.linalg.norm(delta))
    if norm <= bound:
        return delta
    return delta * (bound / norm)


def aggregate(
    global_prev: np.ndarray,
    updates: list[LocalUpdate],
    cfg: AggregationConfig,
    noise_seed: int = 0,
) -> np.ndarray:
    """One aggregation round over the submitted local models.

    avg:    G + (eta/m) * sum_i (P_i - G)
    dp:     G + (eta/m) * sum_i clip(P_i - G, S) + N(0, sigma) per coordinate
    median: G + eta * (coordinate-median(P_i) - G)

    Updates are summed in ascending participant id so the result does not
    depend on submission order.  DP noise is one per-round Gaussian draw
    from noise_seed.
    """
    if not updates:
        raise InputError("need at least one update")
    global_prev = np.asarray(global_prev, dtype=np.float64)
    for u in updates:
        if u.params.shape != global_prev.shape:
            raise InputError(
                f"update from participant {u.participant_id} has shape "
                f"{u.params.shape}, global is {global_prev.shape}"
            )
    ordered = sorted(updates, key=lambda u: u.participant_id)
    m = len(ordered)

    if cfg.strategy == AVG:
        total = np.zeros_like(global_prev)
        for u in ordered:
            total += u.params - global_prev
        return global_prev + (cfg.eta / m) * total

    if cfg.strategy == DP:
        total = np.zeros_like(global_prev)
        for u in ordered:
            total += clip_update(u.params - global_prev, cfg.clip_bound)
        noise = np.random.default_rng(noise_seed).normal(
            0.0, cfg.noise_sigma, size=global_prev.shape
        )
        return global_prev + (cfg.eta / m) * total + noise

    stacked = np.stack([u.params for u in ordered])
    med = np.median(stacked, axis=0)  # even m: mean of the two middle values
    return global_prev + cfg.eta * (med - global_prev)


def craft_replacement_update(
    global_prev: np.ndarray,
    target: np.ndarray,
    m: int,
    eta: float,
    participant_id: int = -1,
) -> LocalUpdate:
    """Local model whose delta, averaged over m peers at rate eta, lands on target.

    Submitted params are G + (m/eta) * (target - G); if the other m-1 deltas
    are zero, averaging aggregation returns exactly the target.
    """
    if not eta > 0:
        raise InputError(f"eta must be > 0, got {eta}")
    global_prev = np.asarray(global_prev, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != global_prev.shape:
        raise InputError("target and global model must have equal length")
    params = global_prev + (m / eta) * (target - global_prev)
    return LocalUpdate(participant_id, params)
