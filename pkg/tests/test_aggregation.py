import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedadapt.aggregation import (
    AggregationConfig,
    LocalUpdate,
    aggregate,
    clip_update,
    craft_replacement_update,
)
from fedadapt.errors import ConfigError, InputError


def updates_from(params_list):
    return [LocalUpdate(i, np.asarray(p, dtype=float)) for i, p in enumerate(params_list)]


# ---------------------------------------------------------------------------
# clipping

def test_clip_inside_ball_unchanged():
    delta = np.array([3.0, 4.0])
    npt.assert_array_equal(clip_update(delta, 15.0), delta)


def test_clip_rescales_to_bound():
    npt.assert_allclose(clip_update(np.array([30.0, 40.0]), 15.0), [9.0, 12.0])


def test_clip_zero_vector():
    npt.assert_array_equal(clip_update(np.zeros(3), 1.0), np.zeros(3))


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20),
       st.floats(1e-3, 1e3))
@settings(max_examples=100, deadline=None)
def test_clip_never_increases_norm_and_keeps_direction(values, bound):
    delta = np.array(values)
    clipped = clip_update(delta, bound)
    assert np.linalg.norm(clipped) <= bound * (1 + 1e-12)
    # direction preserved: cosine between delta and clipped is 1
    if np.linalg.norm(delta) > 0:
        cos = np.dot(delta, clipped) / (np.linalg.norm(delta) * np.linalg.norm(clipped))
        assert cos == pytest.approx(1.0, rel=1e-9)


# ---------------------------------------------------------------------------
# averaging

def test_avg_identical_updates_returns_them():
    g = np.array([1.0, -2.0])
    p = np.array([3.0, 5.0])
    cfg = AggregationConfig("avg", eta=1.0)
    npt.assert_allclose(aggregate(g, updates_from([p, p, p]), cfg), p, atol=1e-15)


def test_avg_hand_example():
    cfg = AggregationConfig("avg", eta=0.5)
    out = aggregate(np.array([0.0]), updates_from([[1.0], [2.0], [3.0]]), cfg)
    npt.assert_allclose(out, [1.0])


def test_empty_updates_rejected():
    with pytest.raises(InputError):
        aggregate(np.zeros(2), [], AggregationConfig("avg"))


def test_length_mismatch_rejected():
    ups = [LocalUpdate(0, np.zeros(3))]
    with pytest.raises(InputError):
        aggregate(np.zeros(2), ups, AggregationConfig("avg"))


# ---------------------------------------------------------------------------
# median

def test_median_of_three_scalars():
    cfg = AggregationConfig("median", eta=1.0)
    out = aggregate(np.array([0.0]), updates_from([[1.0], [2.0], [100.0]]), cfg)
    npt.assert_array_equal(out, [2.0])


def test_median_even_count_averages_middle_two():
    cfg = AggregationConfig("median", eta=1.0)
    out = aggregate(np.array([0.0]), updates_from([[1.0], [2.0], [4.0], [100.0]]), cfg)
    npt.assert_array_equal(out, [3.0])


def test_median_equals_avg_for_identical_updates():
    g = np.zeros(4)
    p = np.array([1.0, -1.0, 2.0, 0.5])
    ups = updates_from([p, p, p])
    avg = aggregate(g, ups, AggregationConfig("avg", eta=1.0))
    med = aggregate(g, ups, AggregationConfig("median", eta=1.0))
    npt.assert_allclose(avg, med, atol=1e-15)


def test_median_bounded_by_benign_range_under_attack():
    rng = np.random.default_rng(0)
    k = 3
    dim = 40
    g = rng.normal(size=dim)
    benign = [g + rng.normal(size=dim) for _ in range(k + 1)]
    attackers = [
        craft_replacement_update(g, rng.normal(size=dim) * 1e6, 2 * k + 1, 1.0, 100 + j).params
        for j in range(k)
    ]
    ups = updates_from(benign + attackers)
    out = aggregate(g, ups, AggregationConfig("median", eta=1.0))
    lo = np.min(np.stack(benign), axis=0)
    hi = np.max(np.stack(benign), axis=0)
    assert np.all(out >= lo) and np.all(out <= hi)


# ---------------------------------------------------------------------------
# dp

def test_dp_with_zero_noise_and_huge_bound_equals_avg():
    rng = np.random.default_rng(1)
    g = rng.normal(size=6)
    ups = updates_from(rng.normal(size=(5, 6)))
    avg = aggregate(g, ups, AggregationConfig("avg", eta=0.7))
    dp = aggregate(g, ups, AggregationConfig("dp", eta=0.7, clip_bound=1e9, noise_sigma=0.0),
                   noise_seed=42)
    npt.assert_array_equal(avg, dp)


def test_dp_single_clipped_update():
    cfg = AggregationConfig("dp", eta=1.0, clip_bound=15.0, noise_sigma=0.0)
    out = aggregate(np.zeros(2), updates_from([[30.0, 40.0]]), cfg, noise_seed=0)
    npt.assert_allclose(out, [9.0, 12.0])


def test_dp_noise_is_seeded():
    g = np.zeros(8)
    ups = updates_from([np.ones(8)])
    cfg = AggregationConfig("dp", eta=1.0, clip_bound=10.0, noise_sigma=0.5)
    a = aggregate(g, ups, cfg, noise_seed=7)
    b = aggregate(g, ups, cfg, noise_seed=7)
    c = aggregate(g, ups, cfg, noise_seed=8)
    npt.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_dp_influence_bound():
    # swapping any single update moves the fixed-noise aggregate by <= eta*2S/m
    rng = np.random.default_rng(2)
    eta, bound, m = 0.9, 2.5, 7
    cfg = AggregationConfig("dp", eta=eta, clip_bound=bound, noise_sigma=0.3)
    for trial in range(100):
        g = rng.normal(size=10)
        ups = updates_from(rng.normal(scale=5.0, size=(m, 10)))
        out_a = aggregate(g, ups, cfg, noise_seed=trial)
        idx = int(rng.integers(m))
        swapped = list(ups)
        swapped[idx] = LocalUpdate(ups[idx].participant_id,
                                   rng.normal(scale=50.0, size=10))
        out_b = aggregate(g, swapped, cfg, noise_seed=trial)
        assert np.linalg.norm(out_a - out_b) <= eta * 2 * bound / m + 1e-12


def test_dp_config_requires_bound_and_sigma():
    with pytest.raises(ConfigError):
        AggregationConfig("dp", eta=1.0)
    with pytest.raises(ConfigError):
        AggregationConfig("dp", eta=1.0, clip_bound=1.0, noise_sigma=-0.1)
    with pytest.raises(ConfigError):
        AggregationConfig("bogus")


# ---------------------------------------------------------------------------
# permutation invariance

@pytest.mark.parametrize("strategy,kw", [
    ("avg", {}),
    ("median", {}),
    ("dp", {"clip_bound": 3.0, "noise_sigma": 0.2}),
])
def test_order_invariance(strategy, kw):
    rng = np.random.default_rng(3)
    g = rng.normal(size=12)
    ups = updates_from(rng.normal(size=(6, 12)))
    cfg = AggregationConfig(strategy, eta=0.8, **kw)
    out = aggregate(g, ups, cfg, noise_seed=5)
    shuffled = [ups[i] for i in rng.permutation(6)]
    npt.assert_array_equal(out, aggregate(g, shuffled, cfg, noise_seed=5))


# ---------------------------------------------------------------------------
# model replacement

def test_replacement_noop_when_target_is_global():
    g = np.array([1.0, 2.0])
    up = craft_replacement_update(g, g, m=5, eta=1.0)
    npt.assert_array_equal(up.params, g)


def test_replacement_hand_example():
    up = craft_replacement_update(np.array([0.0]), np.array([1.0]), m=3, eta=1.0)
    npt.assert_array_equal(up.params, [3.0])


def test_replacement_wins_under_avg():
    rng = np.random.default_rng(4)
    g = rng.normal(size=9)
    target = rng.normal(size=9)
    m, eta = 10, 0.5
    benign = [LocalUpdate(i, g.copy()) for i in range(m - 1)]  # zero deltas
    attacker = craft_replacement_update(g, target, m, eta, participant_id=m - 1)
    out = aggregate(g, benign + [attacker], AggregationConfig("avg", eta=eta))
    npt.assert_allclose(out, target, atol=1e-12)
