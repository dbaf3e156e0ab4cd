import math

import numpy as np
import pytest

from conftest import make_trace, random_trace
from contention import (
    ALL,
    FilterSpec,
    b_beta,
    b_beta_array,
    dynamic_contention,
    filtered_profile,
    n_high,
    s_prefix,
    s_prefix_series,
    static_contention,
    succeeded_contention,
    tau,
    tau_series,
)
from errors import InvalidParameterError
from protocols import parse_protocol, tabulated
from schedule import ObliviousSchedule, batch_per_slot, simple_adversary, synchronous, uniform_random


def test_b_beta_examples():
    assert b_beta(1, 3) == 1.0
    assert b_beta(16, 3) == 1.0
    assert b_beta(10 ** 6, 3) == pytest.approx(math.log(10 ** 6) ** 3 / 10 ** 6)
    assert b_beta(10 ** 6, 3) == pytest.approx(0.0026366, rel=1e-3)
    with pytest.raises(InvalidParameterError):
        b_beta(100, 2.5)
    with pytest.raises(InvalidParameterError):
        b_beta_array([1, 2], 2.0)


def test_b_beta_array_matches_scalar():
    ts = np.arange(1, 3000)
    assert np.allclose(b_beta_array(ts, 3.0), [b_beta(int(t), 3.0) for t in ts], rtol=1e-12)


@pytest.mark.parametrize("beta", [math.e, 3.0, 10.0])
def test_b_beta_is_non_increasing(beta):
    values = b_beta_array(np.arange(1, 10 ** 7 + 1), beta)
    assert np.all(np.diff(values) <= 0)


def test_s_prefix_examples(beb, exp_opt):
    assert s_prefix(beb, 4) == pytest.approx(19 / 12)
    assert s_prefix(beb, 0) == 0.0
    assert s_prefix(exp_opt, 10) == pytest.approx(5.0)
    series = s_prefix_series(beb, 4)
    assert series.tolist() == pytest.approx([0, 0.5, 1.0, 1.0 + 1 / 3, 19 / 12])
    with pytest.raises(InvalidParameterError):
        s_prefix(beb, -1)
    with pytest.raises(InvalidParameterError):
        s_prefix(parse_protocol("global_elias"), 4)


def test_filtered_profile_drops_high_slots(whp_opt):
    low = FilterSpec.low_beta(10.0)
    # B_10(t) = 1 for every t this small, so every slot is low
    assert filtered_profile(whp_opt, 50, low).tolist() == filtered_profile(whp_opt, 50).tolist()
    late = FilterSpec.low_beta_from(10.0, 20)
    profile = filtered_profile(whp_opt, 50, late)
    assert np.all(profile[:19] == 0) and np.all(profile[19:] > 0)
    odd = FilterSpec.custom(lambda j: j % 2)
    assert filtered_profile(whp_opt, 6, odd).tolist()[1::2] == [0.0, 0.0, 0.0]


def test_filter_validation(global_elias):
    with pytest.raises(InvalidParameterError):
        FilterSpec.low_beta(2.0)
    with pytest.raises(InvalidParameterError):
        FilterSpec.low_beta_from(3.0, 0)
    with pytest.raises(InvalidParameterError):
        FilterSpec.low_beta(3.0).mask(global_elias, np.arange(1, 5))
    assert FilterSpec.all().mask(global_elias, np.arange(1, 5)).all()


def test_n_high(whp_opt):
    assert n_high(whp_opt, 16, 3.0) == 0
    assert n_high(whp_opt, 10 ** 6, 10.0) <= s_prefix(whp_opt, 10 ** 6) / b_beta(10 ** 6, 10.0)
    counts = [n_high(whp_opt, k, 3.0) for k in (10, 100, 1000, 10 ** 4, 10 ** 5)]
    assert counts == sorted(counts)


def _random_protocols(count, seed):
    rng = np.random.default_rng(seed)
    protocols = [parse_protocol("whp_opt")]
    for _ in range(count):
        size = int(rng.integers(1, 3000))
        values = rng.uniform(0.0, 1.0, size) ** rng.uniform(1.0, 6.0)
        values[0] = max(values[0], 1e-3)
        protocols.append(tabulated(values))
    return protocols


def test_high_slots_are_bounded_by_prefix_sums():
    k = 10 ** 6
    js = np.arange(1, k + 1)
    for protocol in _random_protocols(50, seed=8):
        probs = protocol.local_prob_array(js)
        sums = np.cumsum(probs)
        for beta in (math.e, 3.0, 10.0):
            floor = b_beta_array(js, beta)
            highs = np.cumsum(probs > floor)
            assert np.all(highs * floor <= sums * (1 + 1e-12))


def test_static_contention_of_synchronous_wakeup(beb, global_elias):
    series = static_contention(synchronous(5), beb, t_max=10)
    assert series.static_vals.tolist() == pytest.approx([5 * min(0.5, 1 / t) for t in range(1, 11)])
    assert series.t_max == 10
    assert series.static_at(4) == pytest.approx(1.25)
    glob = static_contention(synchronous(3), global_elias, t_max=64)
    expected = [3 * global_elias.prob_array(np.array([t]), np.array([t]))[0] for t in range(1, 65)]
    assert glob.static_vals.tolist() == pytest.approx(expected)


def test_static_contention_of_empty_schedule(beb):
    series = static_contention(ObliviousSchedule(), beb, t_max=20)
    assert not series.static_vals.any()
    assert series.static_min(5, 4) == math.inf
    with pytest.raises(InvalidParameterError):
        static_contention(ObliviousSchedule(), beb, t_max=0)
    with pytest.raises(InvalidParameterError):
        series.dynamic_at(3)


def test_static_contention_counts_only_earlier_wakeups(beb):
    schedule = ObliviousSchedule({0: 1, 3: 2})
    series = static_contention(schedule, beb, t_max=5)
    assert series.static_vals.tolist() == pytest.approx([0.5, 0.5, 1 / 3, 0.25 + 1.0, 0.2 + 1.0])


@pytest.mark.parametrize("name", ["beb", "exp_opt", "whp_opt"])
def test_simple_adversary_keeps_contention_high(name):
    protocol = parse_protocol(name)
    schedule = simple_adversary(10 ** 4, protocol.eta)
    series = static_contention(schedule, protocol, t_max=117)
    assert series.static_min(1, 117) >= 10 * math.log(10 ** 4)


def test_uniform_arrivals_have_the_expected_static_contention(beb):
    count, range_end, t = 3333, 1000, 500
    samples = np.array([
        static_contention(uniform_random(count, range_end, seed), beb, t_max=t).static_at(t)
        for seed in range(1000)
    ])
    expected = count / range_end * s_prefix(beb, t)
    stderr = samples.std(ddof=1) / math.sqrt(samples.size)
    assert abs(samples.mean() - expected) <= 3 * stderr


def test_dynamic_equals_static_without_successes(beb):
    trace = make_trace([0, 0, 2, 5], [None] * 4, horizon=30)
    series = dynamic_contention(trace, beb)
    assert np.array_equal(series.dynamic_vals, series.static_vals)


def test_dynamic_drops_a_successful_party(beb):
    trace = make_trace([0, 0], [3, None], horizon=10)
    series = dynamic_contention(trace, beb)
    for t in range(1, 11):
        alive = 2 if t <= 3 else 1
        assert series.dynamic_at(t) == pytest.approx(alive * min(0.5, 1 / t))
    survivors = dynamic_contention(trace, beb, survivors_as_of=2)
    assert np.array_equal(survivors.dynamic_vals, survivors.static_vals)
    after = dynamic_contention(trace, beb, survivors_as_of=4)
    assert after.dynamic_at(2) == pytest.approx(0.5)
    with pytest.raises(InvalidParameterError):
        dynamic_contention(trace, beb, survivors_as_of=11)


def _literal_sum(trace, protocol, t, members):
    return sum(protocol.prob_array(np.array([t]), np.array([t - trace.wake_slots[u]]))[0] for u in members)


@pytest.mark.parametrize("name", ["beb", "global_elias"])
def test_dynamic_contention_matches_party_sums(name):
    protocol = parse_protocol(name)
    rng = np.random.default_rng(21)
    for _ in range(20):
        trace = random_trace(rng, int(rng.integers(1, 12)), horizon=40)
        t0 = int(rng.integers(1, 41))
        live = dynamic_contention(trace, protocol).dynamic_vals
        as_of = dynamic_contention(trace, protocol, survivors_as_of=t0).dynamic_vals
        gone = set(trace.succeeded_before(t0).tolist())
        for t in range(1, 41):
            woken = np.flatnonzero(trace.wake_slots < t).tolist()
            assert live[t - 1] == pytest.approx(_literal_sum(trace, protocol, t, trace.active_at(t)), abs=1e-9)
            kept = [u for u in woken if u not in gone]
            assert as_of[t - 1] == pytest.approx(_literal_sum(trace, protocol, t, kept), abs=1e-9)


def test_static_splits_into_survivors_and_succeeded(whp_opt):
    rng = np.random.default_rng(4)
    low = FilterSpec.low_beta(3.0)
    for _ in range(100):
        trace = random_trace(rng, int(rng.integers(1, 20)), horizon=60)
        t0 = int(rng.integers(1, 61))
        for filter_spec in (ALL, low):
            series = dynamic_contention(trace, whp_opt, filter_spec, survivors_as_of=t0)
            gone = succeeded_contention(trace, whp_opt, filter_spec, t0)
            assert np.allclose(series.dynamic_vals + gone, series.static_vals, atol=1e-12)
            assert np.all(series.dynamic_vals >= 0)
            assert np.all(series.dynamic_vals <= series.static_vals + 1e-12)


def test_tau():
    schedule = synchronous(8)
    assert tau_series(schedule, 4).tolist() == pytest.approx([8, 4, 8 / 3, 2])
    assert tau(schedule, 16) == pytest.approx(0.5)
    assert tau(ObliviousSchedule(), 7) == 0.0
    with pytest.raises(InvalidParameterError):
        tau(schedule, 0)


def test_tau_harmonic_bound():
    rng = np.random.default_rng(9)
    for _ in range(20):
        n = int(rng.integers(1, 300))
        schedule = uniform_random(n, 500, rng)
        t0, width = int(rng.integers(1, 400)), int(rng.integers(1, 2000))
        values = tau_series(schedule, t0 + width)
        assert values[t0 - 1:].sum() <= n * (1 + math.log(width)) + n
    assert tau_series(batch_per_slot(2, 3), 3).tolist() == pytest.approx([2, 3, 2 / 3 + 1 + 2])
