"""End-to-end experiment orchestration and report emission.

Pipeline: federated training over the participant pool, per-participant
comparison against local from-scratch baselines, adaptation of the final
global model, optional re-aggregation of the adapted models, and removal
plus retraining without the participants who gained nothing.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import seeds
from .adaptation import STRATEGY_ORDER, AdaptationConfig, best_adaptation
from .aggregation import AggregationConfig, LocalUpdate, aggregate, craft_replacement_update
from .datagen import (
    ParticipantData,
    SyntheticTask,
    TaskConfig,
    class_entropy_effective,
    generate_task,
    plain_accuracy,
    weighted_accuracy,
)
from .errors import ConfigError, InputError, TrainingError
from .nn import ModelSpec, ModelState, SgdConfig, init_model
from .training import LocalTrainConfig, local_train, train_local_baseline

METRICS = ("plain", "weighted")

REPORT_COLUMNS = (
    "id",
    "acc_local_baseline",
    "acc_federated",
    "acc_adapted",
    "best_strategy",
    "delta_adapted_vs_local",
    "delta_adapted_vs_federated",
    "data_size",
    "data_complexity",
)


@dataclass(frozen=True)
class AttackConfig:
    """Model-replacement attackers: ids that submit the scaled update."""

    malicious_ids: tuple[int, ...]
    target_seed: int


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskConfig
    model: ModelSpec
    rounds: int
    participants_per_round: int
    aggregation: AggregationConfig
    local: LocalTrainConfig
    baseline: LocalTrainConfig
    adaptation_menu: tuple[AdaptationConfig, ...]
    master_seed: int
    attack: AttackConfig | None = None
    metric: str = "plain"
    global_test_per_class: int = 100

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if not 1 <= self.participants_per_round <= self.task.pool_size:
            raise ConfigError("participants_per_round must be in [1, pool_size]")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.model.input_dim != self.task.input_dim:
            raise ConfigError("model input_dim must match the task input_dim")
        if self.model.num_classes != self.task.num_classes:
            raise ConfigError("model num_classes must match the task num_classes")
        if self.attack is not None:
            bad = [i for i in self.attack.malicious_ids
                   if not 0 <= i < self.task.pool_size]
            if bad:
                raise ConfigError(f"malicious ids outside the pool: {bad}")


@dataclass
class ParticipantReport:
    id: int
    acc_local_baseline: float
    acc_federated: float
    acc_adapted: float | None = None
    best_strategy: str | None = None
    delta_adapted_vs_local: float | None = None
    delta_adapted_vs_federated: float | None = None
    data_size: int = 0
    data_complexity: float = 0.0


@dataclass
class ExperimentSummary:
    num_participants: int
    mean_federated_accuracy: float
    median_federated_accuracy: float
    frac_local_beats_federated: float
    num_adapted: int
    mean_adapted_accuracy: float | None
    mean_adaptation_improvement: float | None
    frac_local_beats_adapted: float | None
    strategy_counts: dict[str, int] = field(default_factory=dict)


def _pmap(fn, items, threads: int):
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def global_holdout(task: SyntheticTask, per_class: int):
    """Class-balanced holdout tied to the task seed, shared by every run on it."""
    return task.sample_balanced_test(per_class, seeds.derive_seed(task.cfg.seed, seeds.GLOBAL_TEST))


def make_metric(metric: str, global_test=None):
    """Accuracy closure (model, participant) -> float for the chosen metric."""
    if metric == "plain":
        return lambda model, p: plain_accuracy(model, *p.test)
    if global_test is None:
        raise ConfigError("weighted metric needs the global test set")
    gx, gy = global_test
    return lambda model, p: weighted_accuracy(model, gx, gy, p.class_ratios)


# ---------------------------------------------------------------------------
# federated training loop

def run_federated_training(
    cfg: ExperimentConfig,
    task: SyntheticTask | None = None,
    pool_ids: list[int] | None = None,
    master_seed: int | None = None,
    threads: int = 1,
) -> tuple[ModelState, list[tuple[int, float]]]:
    """Train the global model for cfg.rounds rounds; trace holdout accuracy.

    Each round samples participants_per_round distinct ids uniformly from the
    pool, trains each from the current global model (attackers submit the
    replacement update instead) and aggregates.  Deterministic given the
    master seed regardless of threads.
    """
    if task is None:
        task = generate_task(cfg.task)
    master = cfg.master_seed if master_seed is None else master_seed
    by_id = {p.id: p for p in task.participants}
    ids = sorted(by_id) if pool_ids is None else sorted(pool_ids)
    m = min(cfg.participants_per_round, len(ids))
    if m < 1:
        raise ConfigError("empty participant pool")
    malicious = set(cfg.attack.malicious_ids) if cfg.attack else set()
    target = (init_model(cfg.model, cfg.attack.target_seed).params
              if cfg.attack else None)
    holdout = global_holdout(task, cfg.global_test_per_class)

    model = init_model(cfg.model, seeds.derive_seed(master, seeds.INIT))
    trace = []
    for rnd in range(1, cfg.rounds + 1):
        rng = np.random.default_rng(seeds.derive_seed(master, seeds.SAMPLING, rnd))
        chosen = sorted(rng.choice(ids, size=m, replace=False).tolist())

        def one_update(pid, _rnd=rnd, _model=model):
            if pid in malicious:
                return craft_replacement_update(
                    _model.params, target, m, cfg.aggregation.eta, participant_id=pid)
            local_cfg = replace(
                cfg.local,
                shuffle_seed=seeds.derive_seed(master, seeds.LOCAL_SHUFFLE, _rnd, pid))
            try:
                trained = local_train(_model, by_id[pid], local_cfg)
            except TrainingError as exc:
                raise TrainingError(
                    f"participant {pid} diverged in round {_rnd}: {exc}",
                    epoch=exc.epoch) from exc
            return LocalUpdate(pid, trained.params)

        updates = _pmap(one_update, chosen, threads)
        new_params = aggregate(model.params, updates, cfg.aggregation,
                               noise_seed=seeds.derive_seed(master, seeds.DP_NOISE, rnd))
        model = ModelState(cfg.model, new_params)
        trace.append((rnd, plain_accuracy(model, *holdout)))
    return model, trace


# ---------------------------------------------------------------------------
# evaluation and adaptation phases

def train_baseline_for(
    spec: ModelSpec,
    participant: ParticipantData,
    baseline_cfg: LocalTrainConfig,
    master_seed: int,
) -> ModelState:
    """The from-scratch baseline with the harness's derived seeds."""
    cfg = replace(
        baseline_cfg,
        shuffle_seed=seeds.derive_seed(master_seed, seeds.BASELINE, participant.id, 1))
    init_seed = seeds.derive_seed(master_seed, seeds.BASELINE, participant.id, 0)
    return train_local_baseline(spec, participant, cfg, init_seed)


def evaluate_all(
    global_model: ModelState,
    pool: list[ParticipantData],
    baseline_cfg: LocalTrainConfig,
    master_seed: int,
    metric: str = "plain",
    global_test=None,
    threads: int = 1,
) -> list[ParticipantReport]:
    """Per participant: train the local baseline and score both models."""
    score = make_metric(metric, global_test)

    def one(p):
        baseline = train_baseline_for(global_model.spec, p, baseline_cfg, master_seed)
        return ParticipantReport(
            id=p.id,
            acc_local_baseline=score(baseline, p),
            acc_federated=score(global_model, p),
            data_size=p.size,
            data_complexity=class_entropy_effective(p.class_ratios),
        )

    return _pmap(one, pool, threads)


def run_adaptation_phase(
    global_model: ModelState,
    pool: list[ParticipantData],
    menu: tuple[AdaptationConfig, ...],
    reports: list[ParticipantReport],
    master_seed: int,
    metric: str = "plain",
    global_test=None,
    threads: int = 1,
) -> tuple[list[ParticipantReport], dict[int, ModelState]]:
    """Pick the best adaptation per participant and complete its report.

    A participant whose every strategy diverges keeps empty adapted fields;
    that is recorded, not fatal.
    """
    by_id = {p.id: p for p in pool}
    score = make_metric(metric, global_test)

    def one(report):
        p = by_id[report.id]
        configs = [
            replace(c, shuffle_seed=seeds.derive_seed(master_seed, seeds.ADAPT, p.id, i))
            for i, c in enumerate(menu)
        ]
        try:
            model, tag, acc = best_adaptation(
                global_model, p, configs, score=lambda m: score(m, p))
        except TrainingError:
            return None
        return model, tag, acc

    outcomes = _pmap(one, reports, threads)
    adapted = {}
    for report, outcome in zip(reports, outcomes):
        if outcome is None:
            continue
        model, tag, acc = outcome
        adapted[report.id] = model
        report.acc_adapted = acc
        report.best_strategy = tag
        report.delta_adapted_vs_local = acc - report.acc_local_baseline
        report.delta_adapted_vs_federated = acc - report.acc_federated
    return reports, adapted


def summarize(reports: list[ParticipantReport]) -> ExperimentSummary:
    fed = np.array([r.acc_federated for r in reports])
    local = np.array([r.acc_local_baseline for r in reports])
    done = [r for r in reports if r.acc_adapted is not None]
    counts = {tag: 0 for tag in STRATEGY_ORDER}
    for r in done:
        counts[r.best_strategy] += 1
    adapted_acc = np.array([r.acc_adapted for r in done]) if done else None
    return ExperimentSummary(
        num_participants=len(reports),
        mean_federated_accuracy=float(fed.mean()),
        median_federated_accuracy=float(np.median(fed)),
        frac_local_beats_federated=float(np.mean(local > fed)),
        num_adapted=len(done),
        mean_adapted_accuracy=float(adapted_acc.mean()) if done else None,
        mean_adaptation_improvement=(
            float(np.mean([r.delta_adapted_vs_federated for r in done])) if done else None),
        frac_local_beats_adapted=(
            float(np.mean([r.acc_local_baseline > r.acc_adapted for r in done]))
            if done else None),
        strategy_counts=counts,
    )


# ---------------------------------------------------------------------------
# re-aggregation of adapted models

def reaggregate_adapted(
    global_prev: ModelState,
    adapted: list[ModelState],
    eta: float,
) -> ModelState:
    """Average the adapted models back into one global model (eta=0 keeps G)."""
    if not adapted:
        raise InputError("need at least one adapted model")
    base = global_prev.params
    total = np.zeros_like(base)
    for model in adapted:
        if model.params.shape != base.shape:
            raise InputError("adapted models must match the global model's length")
        total += model.params - base
    return ModelState(global_prev.spec, base + (eta / len(adapted)) * total)


# ---------------------------------------------------------------------------
# removing disincentivized participants

@dataclass
class FilterRetrainOutcome:
    removed_ids: list[int]
    retained_ids: list[int]
    new_global: ModelState
    trace: list[tuple[int, float]]
    mean_acc_old_retained: float
    mean_acc_new_retained: float
    mean_acc_old_removed: float | None
    mean_acc_new_removed: float | None
    count_new_worse_retained: int

    def to_dict(self) -> dict:
        return {
            "removed_ids": self.removed_ids,
            "retained_ids": self.retained_ids,
            "mean_acc_old_retained": self.mean_acc_old_retained,
            "mean_acc_new_retained": self.mean_acc_new_retained,
            "mean_acc_old_removed": self.mean_acc_old_removed,
            "mean_acc_new_removed": self.mean_acc_new_removed,
            "count_new_worse_retained": self.count_new_worse_retained,
        }


def filter_and_retrain(
    cfg: ExperimentConfig,
    reports: list[ParticipantReport],
    task: SyntheticTask | None = None,
    threads: int = 1,
) -> FilterRetrainOutcome:
    """Drop participants whose local baseline beat the federated model, retrain.

    Retraining samples only the retained pool, with a fresh seed derived
    from the master seed, and the new model is scored on both groups.
    """
    if task is None:
        task = generate_task(cfg.task)
    removed = [r.id for r in reports if r.acc_local_baseline > r.acc_federated]
    retained = [r.id for r in reports if r.acc_local_baseline <= r.acc_federated]
    if not retained:
        raise ConfigError("every participant was removed; nothing to retrain on")

    new_global, trace = run_federated_training(
        cfg, task=task, pool_ids=retained,
        master_seed=seeds.derive_seed(cfg.master_seed, seeds.RETRAIN),
        threads=threads)

    holdout = global_holdout(task, cfg.global_test_per_class)
    score = make_metric(cfg.metric, holdout)
    by_id = {p.id: p for p in task.participants}
    old_acc = {r.id: r.acc_federated for r in reports}
    new_acc = {pid: score(new_global, by_id[pid]) for pid in removed + retained}

    def mean_over(ids, table):
        return float(np.mean([table[i] for i in ids])) if ids else None

    return FilterRetrainOutcome(
        removed_ids=removed,
        retained_ids=retained,
        new_global=new_global,
        trace=trace,
        mean_acc_old_retained=mean_over(retained, old_acc),
        mean_acc_new_retained=mean_over(retained, new_acc),
        mean_acc_old_removed=mean_over(removed, old_acc),
        mean_acc_new_removed=mean_over(removed, new_acc),
        count_new_worse_retained=sum(new_acc[i] < old_acc[i] for i in retained),
    )


# ---------------------------------------------------------------------------
# report files

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_reports(
    reports: list[ParticipantReport],
    summary: ExperimentSummary,
    out_dir,
    trace: list[tuple[int, float]] | None = None,
    bin_width: float = 0.002,
) -> None:
    """Write participants.csv, summary.json and, when available, trace.csv
    and the binned improvement table bins.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "participants.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            writer.writerow([_fmt(getattr(r, col)) for col in REPORT_COLUMNS])

    with open(out / "summary.json", "w") as fh:
        json.dump(asdict(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")

    if trace is not None:
        with open(out / "trace.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "global_acc"])
            for rnd, acc in trace:
                writer.writerow([rnd, repr(float(acc))])

    adapted = [r for r in reports if r.acc_adapted is not None]
    if adapted:
        write_bins(adapted, out / "bins.csv", bin_width)


def write_bins(reports: list[ParticipantReport], path, bin_width: float = 0.002) -> None:
    """Improvements averaged over local-baseline accuracy bins.

    top_strategy is the strategy contributing the largest share of the bin's
    total improvement over the unadapted federated model.
    """
    bins: dict[int, list[ParticipantReport]] = {}
    for r in reports:
        bins.setdefault(int(r.acc_local_baseline / bin_width), []).append(r)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count",
                         "mean_improvement_vs_local", "mean_improvement_vs_federated",
                         "top_strategy"])
        for idx in sorted(bins):
            rows = bins[idx]
            shares = {tag: 0.0 for tag in STRATEGY_ORDER}
            for r in rows:
                shares[r.best_strategy] += r.delta_adapted_vs_federated
            top = max(STRATEGY_ORDER, key=lambda t: shares[t])
            writer.writerow([
                repr(idx * bin_width),
                repr((idx + 1) * bin_width),
                len(rows),
                repr(float(np.mean([r.delta_adapted_vs_local for r in rows]))),
                repr(float(np.mean([r.delta_adapted_vs_federated for r in rows]))),
                top,
            ])


def load_reports_csv(path) -> list[ParticipantReport]:
    reports = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            reports.append(ParticipantReport(
                id=int(row["id"]),
                acc_local_baseline=float(row["acc_local_baseline"]),
                acc_federated=float(row["acc_federated"]),
                acc_adapted=float(row["acc_adapted"]) if row["acc_adapted"] else None,
                best_strategy=row["best_strategy"] or None,
                delta_adapted_vs_local=(float(row["delta_adapted_vs_local"])
                                        if row["delta_adapted_vs_local"] else None),
                delta_adapted_vs_federated=(float(row["delta_adapted_vs_federated"])
                                            if row["delta_adapted_vs_federated"] else None),
                data_size=int(row["data_size"]),
                data_complexity=float(row["data_complexity"]),
            ))
    return reports


def load_trace_csv(path) -> list[tuple[int, float]]:
    with open(path, newline="") as fh:
        return [(int(r["round"]), float(r["global_acc"])) for r in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# config (de)serialization; the JSON layout mirrors the dataclass fields

def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {
        "task": asdict(cfg.task),
        "model": {"input_dim": cfg.model.input_dim,
                  "hidden_dims": list(cfg.model.hidden_dims),
                  "num_classes": cfg.model.num_classes},
        "rounds": cfg.rounds,
        "participants_per_round": cfg.participants_per_round,
        "aggregation": asdict(cfg.aggregation),
        "local": asdict(cfg.local),
        "baseline": asdict(cfg.baseline),
        "adaptation_menu": [asdict(c) for c in cfg.adaptation_menu],
        "attack": (None if cfg.attack is None else
                   {"malicious_ids": list(cfg.attack.malicious_ids),
                    "target_seed": cfg.attack.target_seed}),
        "master_seed": cfg.master_seed,
        "metric": cfg.metric,
        "global_test_per_class": cfg.global_test_per_class,
    }
    return out


def _train_cfg_from(d: dict) -> LocalTrainConfig:
    return LocalTrainConfig(epochs=d["epochs"], batch_size=d["batch_size"],
                            sgd=SgdConfig(**d["sgd"]),
                            shuffle_seed=d.get("shuffle_seed", 0))


def config_from_dict(d: dict) -> ExperimentConfig:
    menu = []
    for c in d.get("adaptation_menu", []):
        c = dict(c)
        c["sgd"] = SgdConfig(**c["sgd"])
        menu.append(AdaptationConfig(**c))
    attack = d.get("attack")
    return ExperimentConfig(
        task=TaskConfig(**d["task"]),
        model=ModelSpec(d["model"]["input_dim"], tuple(d["model"]["hidden_dims"]),
                        d["model"]["num_classes"]),
        rounds=d["rounds"],
        participants_per_round=d["participants_per_round"],
        aggregation=AggregationConfig(**d["aggregation"]),
        local=_train_cfg_from(d["local"]),
        baseline=_train_cfg_from(d["baseline"]),
        adaptation_menu=tuple(menu),
        master_seed=d["master_seed"],
        attack=(None if attack is None else
                AttackConfig(tuple(attack["malicious_ids"]), attack["target_seed"])),
        metric=d.get("metric", "plain"),
        global_test_per_class=d.get("global_test_per_class", 100),
    )
