"""Ready-made experiment configurations.

smoke             - minute-scale sanity run (pool 20, 50 rounds)
paper-qualitative - the pool-100, 500-round, 10-class heterogeneous setup
                    used for the qualitative ordering/recovery experiments
attack-demo       - model replacement: one attacker among honest peers
"""
from __future__ import annotations

from . import seeds
from .adaptation import AdaptationConfig
from .aggregation import AggregationConfig
from .datagen import TaskConfig
from .harness import AttackConfig, ExperimentConfig
from .nn import ModelSpec, SgdConfig
from .training import LocalTrainConfig


def _aggregation(strategy: str) -> AggregationConfig:
    # clip/noise sized to desk-scale update norms (~1-2.5); a bound that
    # never binds plus vanishing noise would make dp identical to avg
    if strategy == "dp":
        return AggregationConfig("dp", eta=1.0, clip_bound=1.0, noise_sigma=0.008)
    return AggregationConfig(strategy, eta=1.0)


def _menu(epochs: int, lr: float, batch_size: int) -> tuple[AdaptationConfig, ...]:
    # per-strategy steps: the anchor penalty at lam=5000 needs
    # lr * lam * max(fisher) < 2 to keep SGD stable, and the kd loss scales
    # gradients by alpha*K^2, so both get rescaled learning rates
    sgd = SgdConfig(lr=lr)
    return (
        AdaptationConfig("ft", epochs=epochs, sgd=sgd, batch_size=batch_size),
        AdaptationConfig("fb", epochs=epochs, sgd=sgd, batch_size=batch_size),
        AdaptationConfig("mtl", epochs=epochs, sgd=SgdConfig(lr=2e-5),
                         batch_size=batch_size, lam=5000.0),
        AdaptationConfig("kd", epochs=epochs, sgd=SgdConfig(lr=lr / 36.0),
                         batch_size=batch_size, alpha=0.95, temperature=6.0),
    )


def smoke(seed: int = 0, aggregation: str = "avg") -> ExperimentConfig:
    return ExperimentConfig(
        task=TaskConfig(num_classes=4, input_dim=8, pool_size=20, dirichlet_alpha=0.9,
                        samples_min=60, samples_max=150, class_separation=2.5,
                        seed=seeds.derive_seed(seed, seeds.TASK),
                        participant_spread=1.0),
        model=ModelSpec(8, (16,), 4),
        rounds=50,
        participants_per_round=5,
        aggregation=_aggregation(aggregation),
        local=LocalTrainConfig(epochs=2, batch_size=32, sgd=SgdConfig(lr=0.1)),
        baseline=LocalTrainConfig(epochs=60, batch_size=32, sgd=SgdConfig(lr=0.1)),
        adaptation_menu=_menu(epochs=20, lr=0.05, batch_size=32),
        master_seed=seed,
        global_test_per_class=50,
    )


def paper_qualitative(seed: int = 0, aggregation: str = "avg") -> ExperimentConfig:
    """Heterogeneous 10-class pool; accuracy ordering avg >= dp >= median.

    Calibrated so the three aggregation modes separate: a heavy-tailed
    participant shift supplies genuine outliers, sample scarcity keeps the
    local baselines honest, and the clip/noise pair damages accuracy less
    than the median does.
    """
    return ExperimentConfig(
        task=TaskConfig(num_classes=10, input_dim=24, pool_size=100, dirichlet_alpha=0.9,
                        samples_min=40, samples_max=160, class_separation=3.0,
                        seed=seeds.derive_seed(seed, seeds.TASK),
                        participant_spread=1.2, spread_profile="exponential"),
        model=ModelSpec(24, (32,), 10),
        rounds=500,
        participants_per_round=10,
        aggregation=_aggregation(aggregation),
        local=LocalTrainConfig(epochs=2, batch_size=32, sgd=SgdConfig(lr=0.1)),
        baseline=LocalTrainConfig(epochs=100, batch_size=32, sgd=SgdConfig(lr=0.1)),
        adaptation_menu=_menu(epochs=40, lr=0.05, batch_size=32),
        master_seed=seed,
        global_test_per_class=100,
    )


def attack_demo(seed: int = 0, aggregation: str = "avg") -> ExperimentConfig:
    """One model-replacement attacker in a pool of 21, sampled every round."""
    cfg = smoke(seed, aggregation)
    return ExperimentConfig(
        task=TaskConfig(num_classes=4, input_dim=8, pool_size=21, dirichlet_alpha=0.9,
                        samples_min=60, samples_max=150, class_separation=2.5,
                        seed=seeds.derive_seed(seed, seeds.TASK)),
        model=cfg.model,
        rounds=30,
        participants_per_round=11,
        aggregation=_aggregation(aggregation),
        local=cfg.local,
        baseline=cfg.baseline,
        adaptation_menu=cfg.adaptation_menu,
        master_seed=seed,
        attack=AttackConfig(malicious_ids=(0,), target_seed=seeds.derive_seed(seed, seeds.ATTACK)),
        global_test_per_class=50,
    )


PRESETS = {
    "smoke": smoke,
    "paper-qualitative": paper_qualitative,
    "attack-demo": attack_demo,
}
