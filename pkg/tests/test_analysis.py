import math

import numpy as np
import pytest

from analysis import (
    CENSORING_LIMIT,
    RESTRICTED_WINDOW_SURVIVAL,
    BlockClass,
    DensityProfile,
    block_exponent,
    block_width,
    classify_blocks,
    density_goodness,
    filtered_contention_bound,
    heavy_threshold,
    latency_scale,
    latency_stats,
    restricted_window_experiment,
    success_probability_bounds,
    upper_ind_range_experiment,
)
from conftest import make_trace, random_trace
from elias import zeta
from engine import ContentionEngine, run_trials
from errors import InvalidParameterError
from protocols import parse_protocol
from schedule import ObliviousSchedule, batch_per_slot, layered_adversary, synchronous, uniform_random


def test_filtered_contention_bound():
    assert filtered_contention_bound(0.0) == 1.0
    assert filtered_contention_bound(2.0) == pytest.approx((1 + 2 * math.e) * math.exp(-2))
    assert filtered_contention_bound(50.0) < 1e-18


def test_success_probability_bounds():
    bounds = success_probability_bounds([0.25, 0.25, 0.5])
    assert bounds.sigma == 1.0
    assert bounds.lower == pytest.approx(0.25)
    assert bounds.upper == pytest.approx(1.0)
    assert bounds.lower <= bounds.exact <= bounds.upper
    assert bounds.at_most_one_upper == pytest.approx(math.exp(-1) + 1.0)


def test_block_parameters():
    # 2 log2 log2 16 + log2 8 = 4 + 3
    assert block_exponent(16) == 7
    assert block_exponent(16, factor=4) == 6
    assert block_exponent(2 ** 16, c=2) == 12
    assert block_width(16) == math.ceil(zeta(15))
    assert heavy_threshold(1024) == 800.0
    with pytest.raises(InvalidParameterError):
        block_exponent(8)
    with pytest.raises(InvalidParameterError):
        block_exponent(64, c=0.5)


def test_blocks_with_arrivals_are_wakeup_blocks():
    n = 16
    width = block_width(n)
    last = 3 * width
    report = classify_blocks(batch_per_slot(1, last + 1), n, 1.0, (1, last))
    assert report.count(BlockClass.WAKEUP) == len(report.classes) == 3
    assert report.lam == 7 and report.light_exponent == 6
    assert report.block_width == width


def test_a_long_quiet_schedule_gives_light_blocks():
    n = 16
    width = block_width(n)
    first = 10 ** 5
    report = classify_blocks(synchronous(n), n, 1.0, (first, first + 3 * width - 1))
    assert report.classes == [BlockClass.LIGHT] * 3
    assert report.starts.tolist() == [first, first + width, first + 2 * width]
    assert report.tau_at_start[0] == pytest.approx(n / first)


def test_a_crowded_start_gives_a_heavy_block():
    n = 1000
    report = classify_blocks(synchronous(n), n, 1.0, (1, 10))
    assert report.classes == [BlockClass.HEAVY]
    assert report.tau_at_start[0] == pytest.approx(1000.0)
    rows = list(report.rows())
    assert rows == [(0, 1, "heavy", pytest.approx(1000.0))]


def test_partial_last_block_and_validation():
    n = 16
    width = block_width(n)
    report = classify_blocks(synchronous(n), n, 1.0, (1, width + 5))
    assert len(report.classes) == 2
    with pytest.raises(InvalidParameterError):
        classify_blocks(synchronous(n), n, 1.0, (0, 10))
    with pytest.raises(InvalidParameterError):
        classify_blocks(synchronous(n), 8, 1.0, (1, 10))


def test_heavy_blocks_are_bounded_by_the_tau_mass():
    rng = np.random.default_rng(14)
    for _ in range(10):
        n = int(rng.integers(16, 5000))
        schedule = uniform_random(n, int(rng.integers(1, 2000)), rng)
        width = block_width(n)
        report = classify_blocks(schedule, n, 1.0, (1, 4 * width))
        assert report.count(BlockClass.HEAVY) <= report.tau_sum / heavy_threshold(n)
        assert report.tau_vals.size == 4 * width


def test_density_profile_intervals():
    profile = DensityProfile(t0=5, mu=0.5, delta=4)
    assert profile.intervals(11) == [(0.0, 1, 5), (0.5, 5, 9)]
    assert profile.intervals(12) == [(0.0, 1, 5), (0.5, 5, 9), (0.5, 9, 13)]
    assert profile.to_dict() == {"t0": 5, "mu": 0.5, "delta": 4}
    with pytest.raises(InvalidParameterError):
        DensityProfile(0, 0.5, 4)
    with pytest.raises(InvalidParameterError):
        DensityProfile(3, 1.5, 4)
    with pytest.raises(InvalidParameterError):
        profile.intervals(2)


def test_density_goodness():
    profile = DensityProfile(t0=5, mu=0.25, delta=4)
    quiet = make_trace([0, 0], [None, None], horizon=12)
    assert density_goodness(quiet, profile) == [True, True, True]
    early = make_trace([0, 0], [3, None], horizon=12)
    assert density_goodness(early, profile) == [False, True, True]
    busy = make_trace([0, 0, 0], [5, 6, None], horizon=12)
    assert density_goodness(busy, profile) == [True, False, True]
    loose = DensityProfile(t0=1, mu=1.0, delta=4)
    assert all(density_goodness(busy, loose))


def test_latency_stats_of_one_party():
    trace = make_trace([5], [12], horizon=20)
    stats = latency_stats([trace], 0.5)
    assert stats.mean == stats.max == stats.mean_max == 7
    assert stats.quantiles == {0.5: 7.0, 0.9: 7.0, 0.99: 7.0}
    assert stats.q_threshold == 7.0
    assert stats.censored_fraction == 0.0
    assert not stats.unreliable


def test_latency_stats_pooling_and_censoring():
    first = make_trace([0, 0, 0], [2, 5, None], horizon=9)
    second = make_trace([1, 1], [4, 8], horizon=9)
    stats = latency_stats([first, second], 0.1)
    assert stats.latencies.tolist() == [2, 5, 10, 3, 7]
    assert stats.mean == pytest.approx(27 / 5)
    assert stats.max == 10
    assert stats.mean_max == pytest.approx((10 + 7) / 2)
    assert stats.censored_fraction == pytest.approx(0.2)
    assert stats.unreliable
    assert stats.quantiles[0.5] == 5.0
    assert stats.q_threshold == stats.quantiles[0.9] == 10.0
    data = stats.to_dict()
    assert data["parties"] == 5 and data["finished"] == 4
    assert data["quantiles"]["0.5"] == 5.0


def test_latency_stats_with_every_party_censored(caplog):
    trace = make_trace([0, 0], [None, None], horizon=9)
    stats = latency_stats([trace], 0.5)
    assert stats.all_censored
    assert math.isnan(stats.mean) and stats.max == -1
    assert stats.censored_fraction == 1.0
    assert "censored" in caplog.text
    with pytest.raises(InvalidParameterError):
        latency_stats([], 0.5)
    data = stats.to_dict()
    assert data["mean"] is data["max"] is data["mean_max"] is data["q_threshold"] is None
    with pytest.raises(InvalidParameterError):
        latency_stats([trace], 1.0)


@pytest.mark.parametrize("q", [0.1, 0.5, 0.9])
def test_a_censored_party_never_lowers_the_statistics(q):
    rng = np.random.default_rng(17)
    checked = 0
    for _ in range(40):
        horizon = int(rng.integers(5, 60))
        trace = random_trace(rng, int(rng.integers(1, 12)), horizon)
        before = latency_stats([trace], q)
        if before.all_censored:
            continue
        done = [None if s < 0 else s for s in trace.success_slots.tolist()]
        extra_wake = int(rng.integers(0, horizon + 1))
        extended = make_trace(trace.wake_slots.tolist() + [extra_wake], done + [None], horizon)
        after = latency_stats([extended], q)
        assert after.mean >= before.mean
        assert after.max >= before.max
        assert after.mean_max >= before.mean_max
        assert after.q_threshold >= before.q_threshold
        assert after.max == horizon + 1
        checked += 1
    assert checked > 20


def test_quantiles_are_monotone_and_the_median_is_at_most_twice_the_mean(exp_opt):
    traces = run_trials(exp_opt, synchronous(40), 20_000, 3, trials=5)
    thresholds = [latency_stats(traces, q).q_threshold for q in (0.9, 0.5, 0.1, 0.01)]
    assert thresholds == sorted(thresholds)
    stats = latency_stats(traces, 0.5)
    assert stats.q_threshold <= 2 * stats.mean
    assert stats.censored_fraction < CENSORING_LIMIT


def test_latency_scale(global_elias, exp_opt):
    assert latency_scale(global_elias, 256) == pytest.approx(256 * zeta(2 * block_exponent(256) + 1))
    assert latency_scale(exp_opt, 256) == pytest.approx(256 * 8 / 3)


def test_restricted_window_experiment_basics(exp_opt):
    assert restricted_window_experiment(exp_opt, ObliviousSchedule(), 0, 100, 1).probability == 1.0
    alone = restricted_window_experiment(exp_opt, ObliviousSchedule(), 10 ** 4, 100, 1)
    assert alone.trials == 100
    assert alone.probability == 0.0
    with pytest.raises(InvalidParameterError):
        restricted_window_experiment(exp_opt, ObliviousSchedule(), 10, 99, 1)
    with pytest.raises(InvalidParameterError):
        restricted_window_experiment(exp_opt, ObliviousSchedule(), -1, 100, 1)


def test_upper_ind_range_experiment(exp_opt):
    estimate = upper_ind_range_experiment(exp_opt, synchronous(4), 0, 1, 50, 200, 6)
    assert estimate.trials == 200
    assert 0.0 <= estimate.probability <= 1.0
    late = upper_ind_range_experiment(exp_opt, synchronous(4), 0, 30, 50, 200, 6)
    assert late.trials <= 200
    with pytest.raises(InvalidParameterError):
        upper_ind_range_experiment(exp_opt, synchronous(4), 0, 0, 50, 200, 6)


@pytest.mark.slow
def test_layered_adversary_keeps_a_party_waiting(whp_opt):
    n = 4096
    report = layered_adversary(n, whp_opt, 10.0, 1.0, rng_seed=1)
    assert report.verified
    survival = restricted_window_experiment(whp_opt, report.schedule, report.window_end, 1000, 2)
    assert survival.probability >= RESTRICTED_WINDOW_SURVIVAL - 3 * survival.stderr


def _mean_max_latencies(protocol, schedule_for, n_values, horizon_for, trials, seed):
    engine = ContentionEngine()
    result = {}
    for n in n_values:
        traces = run_trials(protocol, schedule_for(n), horizon_for(n), seed + n, trials, engine=engine)
        stats = latency_stats(traces, 0.5)
        assert stats.censored_fraction < CENSORING_LIMIT
        result[n] = stats
    return result


@pytest.mark.slow
def test_global_elias_latency_scales_with_n_zeta(global_elias):
    n_values = [2 ** k for k in range(8, 13)]
    stats = _mean_max_latencies(global_elias, synchronous, n_values,
                                lambda n: min(2 ** 26, 8 * math.ceil(latency_scale(global_elias, n))), 50, 0)
    fitted = stats[256].mean_max / latency_scale(global_elias, 256)
    for n in n_values:
        assert stats[n].mean_max <= 1.5 * fitted * latency_scale(global_elias, n)


@pytest.mark.slow
def test_exp_opt_latency_scales_with_n_log_n(exp_opt):
    n_values = [64, 256, 1024, 4096]
    stats = _mean_max_latencies(exp_opt, synchronous, n_values,
                                lambda n: 64 * math.ceil(latency_scale(exp_opt, n)), 20, 0)
    ratios = [stats[n].mean_max / latency_scale(exp_opt, n) for n in n_values]
    assert max(ratios) <= 40.0
    assert ratios[-1] <= 1.5 * ratios[0]


@pytest.mark.slow
def test_exp_opt_mean_latency_beats_backoff_under_steady_arrivals(exp_opt, beb):
    n = 2 ** 12
    rate = math.ceil(math.log2(n))
    schedule = batch_per_slot(rate, n // rate)
    engine = ContentionEngine()
    means = {}
    for protocol in (exp_opt, beb):
        traces = run_trials(protocol, schedule, 2 ** 24, 5, 3, engine=engine)
        means[protocol.name] = latency_stats(traces, 0.5).mean
    assert means["exp_opt"] < means["beb"]
