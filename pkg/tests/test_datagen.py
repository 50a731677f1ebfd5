import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedadapt.datagen import (
    ParticipantData,
    TaskConfig,
    class_entropy_effective,
    generate_task,
    load_pool,
    plain_accuracy,
    save_pool,
    split_in_order,
    weighted_accuracy,
)
from fedadapt.errors import ConfigError, EvaluationError, InputError
from fedadapt.nn import ModelSpec, ModelState, init_model


def make_cfg(**kw):
    base = dict(num_classes=4, input_dim=6, pool_size=50, dirichlet_alpha=0.9,
                samples_min=400, samples_max=400, class_separation=3.0, seed=0)
    base.update(kw)
    return TaskConfig(**base)


# ---------------------------------------------------------------------------
# task generation

def test_generate_deterministic():
    cfg = make_cfg(pool_size=5, samples_min=20, samples_max=60)
    a = generate_task(cfg)
    b = generate_task(cfg)
    npt.assert_array_equal(a.class_means, b.class_means)
    for pa, pb in zip(a.participants, b.participants):
        npt.assert_array_equal(pa.train_x, pb.train_x)
        npt.assert_array_equal(pa.train_y, pb.train_y)
        npt.assert_array_equal(pa.test_x, pb.test_x)
        npt.assert_array_equal(pa.test_y, pb.test_y)


def test_high_alpha_ratios_near_uniform():
    task = generate_task(make_cfg(dirichlet_alpha=1000.0))
    for p in task.participants:
        npt.assert_allclose(p.class_ratios, 0.25, atol=0.1)


def test_low_alpha_concentrates_mass():
    task = generate_task(make_cfg(dirichlet_alpha=0.1))
    top = sorted(p.class_ratios.max() for p in task.participants)
    assert top[len(top) // 2] > 0.6


def test_max_ratio_nonincreasing_in_alpha():
    alphas = [0.1, 0.9, 10.0, 1000.0]
    inversions = 0
    for seed in range(3):
        means = [
            np.mean([p.class_ratios.max()
                     for p in generate_task(make_cfg(dirichlet_alpha=a, seed=seed)).participants])
            for a in alphas
        ]
        inversions += sum(means[i] < means[i + 1] for i in range(len(means) - 1))
    assert inversions <= 1


def test_sample_counts_in_range_and_ratios_consistent():
    cfg = make_cfg(samples_min=150, samples_max=500, pool_size=30)
    task = generate_task(cfg)
    for p in task.participants:
        assert 150 <= p.size <= 500
        counts = np.bincount(p.train_y, minlength=cfg.num_classes)
        npt.assert_allclose(p.class_ratios, counts / counts.sum(), atol=1e-9)
        assert abs(p.class_ratios.sum() - 1.0) < 1e-9


def test_participant_spread_moves_the_data():
    base = generate_task(make_cfg(pool_size=3))
    spread = generate_task(make_cfg(pool_size=3, participant_spread=2.0))
    # same labels are drawn either way; features shift per participant
    assert any(
        not np.allclose(a.train_x, b.train_x)
        for a, b in zip(base.participants, spread.participants)
    )


def test_config_validation():
    with pytest.raises(ConfigError):
        make_cfg(num_classes=1)
    with pytest.raises(ConfigError):
        make_cfg(samples_min=500, samples_max=100)
    with pytest.raises(ConfigError):
        make_cfg(dirichlet_alpha=0.0)
    with pytest.raises(ConfigError):
        make_cfg(samples_min=5, samples_max=8)


def test_balanced_holdout_shape_and_determinism():
    task = generate_task(make_cfg(pool_size=2, samples_min=20, samples_max=20))
    x0, y0 = task.sample_balanced_test(25, seed=3)
    x1, y1 = task.sample_balanced_test(25, seed=3)
    assert x0.shape == (100, 6)
    npt.assert_array_equal(np.bincount(y0), 25)
    npt.assert_array_equal(x0, x1)
    npt.assert_array_equal(y0, y1)


# ---------------------------------------------------------------------------
# chronological split

def test_split_nine_to_one():
    x = np.arange(10)[:, None].astype(float)
    y = np.arange(10)
    (tx, ty), (vx, vy) = split_in_order(x, y, 0.9)
    assert len(ty) == 9 and len(vy) == 1


def test_split_keeps_order():
    x = np.arange(100)[:, None].astype(float)
    y = np.arange(100)
    (tx, ty), (vx, vy) = split_in_order(x, y, 0.9)
    npt.assert_array_equal(ty, np.arange(90))
    npt.assert_array_equal(vy, np.arange(90, 100))


def test_split_too_small_rejected():
    x = np.zeros((5, 1))
    with pytest.raises(InputError):
        split_in_order(x, np.zeros(5, dtype=int), 0.9)


@given(n=st.integers(10, 300), ratio=st.floats(0.1, 0.9))
@settings(max_examples=50, deadline=None)
def test_split_partitions_without_loss(n, ratio):
    x = np.arange(n)[:, None].astype(float)
    y = np.arange(n)
    try:
        (tx, ty), (vx, vy) = split_in_order(x, y, ratio)
    except InputError:
        assert int(np.ceil(ratio * n)) >= n
        return
    assert len(ty) + len(vy) == n
    npt.assert_array_equal(np.concatenate([ty, vy]), y)


# ---------------------------------------------------------------------------
# metrics

def one_layer_model(w, b):
    w = np.asarray(w, dtype=float)
    spec = ModelSpec(w.shape[0], (), w.shape[1])
    return ModelState(spec, np.concatenate([w.ravel(), np.asarray(b, dtype=float)]))


def test_plain_accuracy_tie_breaks_to_class_zero():
    model = one_layer_model(np.zeros((2, 3)), np.zeros(3))
    x = np.zeros((4, 2))
    assert plain_accuracy(model, x, np.zeros(4, dtype=int)) == 1.0
    assert plain_accuracy(model, x, np.ones(4, dtype=int)) == 0.0


def test_plain_accuracy_counts():
    # logits = [x, -x]: predicts class 0 iff x >= 0
    model = one_layer_model([[1.0, -1.0]], [0.0, 0.0])
    x = np.array([[1.0], [1.0], [-1.0], [-1.0]])
    y = np.array([0, 0, 1, 0])
    assert plain_accuracy(model, x, y) == 0.75


def test_plain_accuracy_empty_rejected():
    model = one_layer_model(np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(InputError):
        plain_accuracy(model, np.zeros((0, 2)), np.array([], dtype=int))


def test_weighted_accuracy_perfect_model():
    model = one_layer_model([[1.0, -1.0]], [0.0, 0.0])
    x = np.array([[1.0], [2.0], [-1.0], [-2.0]])
    y = np.array([0, 0, 1, 1])
    for ratios in ([0.5, 0.5], [0.9, 0.1], [0.0, 1.0]):
        assert weighted_accuracy(model, x, y, np.array(ratios)) == 1.0


def test_weighted_accuracy_hand_example():
    # class 0 accuracy 1.0, class 1 accuracy 0.5; ratios (0.8, 0.2) -> 0.9
    model = one_layer_model([[1.0, -1.0]], [0.0, 0.0])
    x = np.array([[1.0], [2.0], [-1.0], [1.0]])
    y = np.array([0, 0, 1, 1])
    assert weighted_accuracy(model, x, y, np.array([0.8, 0.2])) == pytest.approx(0.9)


def test_weighted_accuracy_missing_class_rejected():
    model = one_layer_model([[1.0, -1.0]], [0.0, 0.0])
    x = np.array([[1.0], [2.0]])
    y = np.array([0, 0])
    with pytest.raises(EvaluationError):
        weighted_accuracy(model, x, y, np.array([0.5, 0.5]))
    # zero-ratio classes may be absent
    assert weighted_accuracy(model, x, y, np.array([1.0, 0.0])) == 1.0


def test_weighted_equals_plain_on_balanced_test_with_uniform_ratios():
    task = generate_task(make_cfg(pool_size=1, samples_min=20, samples_max=20))
    model = init_model(ModelSpec(6, (8,), 4), 0)
    x, y = task.sample_balanced_test(30, seed=9)
    uniform = np.full(4, 0.25)
    assert weighted_accuracy(model, x, y, uniform) == pytest.approx(
        plain_accuracy(model, x, y), abs=1e-12)


def test_class_entropy_effective():
    assert class_entropy_effective(np.array([0.25, 0.25, 0.25, 0.25])) == pytest.approx(4.0)
    assert class_entropy_effective(np.array([1.0, 0.0])) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# pool serialization

def test_pool_round_trip(tmp_path):
    cfg = make_cfg(pool_size=4, samples_min=15, samples_max=30)
    task = generate_task(cfg)
    path = tmp_path / "pool.txt"
    save_pool(path, task.participants)
    loaded = load_pool(path, cfg.num_classes)
    assert len(loaded) == 4
    for a, b in zip(task.participants, loaded):
        assert a.id == b.id
        npt.assert_array_equal(a.train_x, b.train_x)
        npt.assert_array_equal(a.train_y, b.train_y)
        npt.assert_array_equal(a.test_x, b.test_x)
        npt.assert_array_equal(a.test_y, b.test_y)
        npt.assert_array_equal(a.class_ratios, b.class_ratios)


def test_pool_file_field_order(tmp_path):
    p = ParticipantData(7, np.full((11, 2), 0.5), np.ones(11, dtype=int),
                        np.zeros((2, 2)), np.zeros(2, dtype=int), num_classes=2)
    path = tmp_path / "pool.txt"
    save_pool(path, [p])
    first = path.read_text().splitlines()[0].split(",")
    assert first[:3] == ["7", "train", "1"]
    assert len(first) == 5
