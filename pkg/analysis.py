"""Analysis of schedules and traces: blocks, density goodness, latency and experiments.

Contention math lives in ``contention`` and counter games in ``counter_game``;
both are re-exported here. Block quantities use base-2 logarithms.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from contention import (  # noqa: F401
    ALL,
    ContentionSeries,
    FilterKind,
    FilterSpec,
    b_beta,
    b_beta_array,
    dynamic_contention,
    n_high,
    s_prefix,
    s_prefix_series,
    static_contention,
    succeeded_contention,
    tau,
    tau_series,
)
from counter_game import (  # noqa: F401
    CounterGameBound,
    CounterGameConfig,
    CounterGameSummary,
    counter_game_bound,
    counter_game_run,
    counter_game_trials,
    fixed_option_strategy,
    greedy_drain_strategy,
    upper_ind_range_bound,
    upper_ind_range_config,
)
from elias import zeta
from engine import ContentionEngine, derive_seed, single_slot_success_prob
from errors import InvalidParameterError
from schedule import ObliviousSchedule, combine

logger = logging.getLogger(__name__)

RESTRICTED_WINDOW_SURVIVAL = 4.0 ** -0.125
CENSORING_LIMIT = 0.01


def filtered_contention_bound(sigma):
    """(1 + e sigma) e^-sigma: at most one filtered transmitter when contention is sigma."""
    return (1.0 + math.e * sigma) * math.exp(-sigma)


@dataclass(frozen=True)
class SuccessBounds:
    sigma: float
    exact: float
    lower: float
    upper: float
    at_most_one_upper: float


def success_probability_bounds(probs):
    """Exact single-slot success probability next to sigma 4^-sigma and sigma e^(1-sigma)."""
    sigma = math.fsum(float(p) for p in probs)
    return SuccessBounds(
        sigma=sigma,
        exact=single_slot_success_prob(probs),
        lower=sigma * 4.0 ** -sigma,
        upper=sigma * math.exp(1.0 - sigma),
        at_most_one_upper=math.exp(-sigma) + sigma * math.exp(1.0 - sigma),
    )


class BlockClass(Enum):
    WAKEUP = "wakeup"
    HEAVY = "heavy"
    LIGHT = "light"
    NORMAL = "normal"


def block_exponent(n, c=1.0, factor=8):
    """ceil(2 log2 log2 n + log2(factor * c)); factor 8 sizes blocks, factor 4 is the light-slot exponent."""
    if n < 16:
        raise InvalidParameterError(f"block analysis needs n >= 16, got {n}")
    if c < 1:
        raise InvalidParameterError(f"c must be >= 1, got {c}")
    return math.ceil(2.0 * math.log2(math.log2(n)) + math.log2(factor * c))


def block_width(n, c=1.0):
    """ceil(zeta(2 lambda + 1)) slots."""
    return math.ceil(zeta(2 * block_exponent(n, c) + 1))


def heavy_threshold(n, c=1.0):
    return 8.0 * c * math.log2(n) ** 2


@dataclass(frozen=True, eq=False)
class BlockReport:
    n: int
    c: float
    lam: int
    light_exponent: int
    block_width: int
    window: tuple
    starts: np.ndarray
    classes: list
    tau_at_start: np.ndarray
    tau_vals: np.ndarray = field(repr=False)

    def count(self, block_class):
        return sum(1 for cls in self.classes if cls is block_class)

    @property
    def tau_sum(self):
        return float(self.tau_vals.sum())

    def rows(self):
        for index, (start, cls, value) in enumerate(zip(self.starts, self.classes, self.tau_at_start)):
            yield index, int(start), cls.value, float(value)


def classify_blocks(schedule, n, c, window):
    """Cut [first, last] into blocks and label each by arrivals and tau at its first slot.

    The last block may be shorter than the others when the window width is not
    a multiple of the block width.
    """
    first, last = window
    if first < 1 or last < first:
        raise InvalidParameterError(f"window must satisfy 1 <= first <= last, got {window}")
    lam = block_exponent(n, c)
    width = block_width(n, c)
    threshold = heavy_threshold(n, c)
    taus = tau_series(schedule, last)
    arrivals = schedule.as_array(last + 1)
    starts = np.arange(first, last + 1, width, dtype=np.int64)
    classes = []
    for start in starts:
        end = min(int(start) + width - 1, last)
        if arrivals[start:end + 1].any():
            classes.append(BlockClass.WAKEUP)
        elif taus[start - 1] > threshold:
            classes.append(BlockClass.HEAVY)
        elif taus[start - 1] < 1.0 / threshold:
            classes.append(BlockClass.LIGHT)
        else:
            classes.append(BlockClass.NORMAL)
    report = BlockReport(
        n=n,
        c=c,
        lam=lam,
        light_exponent=block_exponent(n, c, factor=4),
        block_width=width,
        window=(first, last),
        starts=starts,
        classes=classes,
        tau_at_start=taus[starts - 1],
        tau_vals=taus[first - 1:last],
    )
    logger.debug("classified %d blocks of width %d: %d heavy, %d light",
                 starts.size, width, report.count(BlockClass.HEAVY), report.count(BlockClass.LIGHT))
    return report


@dataclass(frozen=True)
class DensityProfile:
    """Pi(t0, mu, delta): no successes in [1, t0), at most mu * delta in each later delta-interval."""

    t0: int
    mu: float
    delta: int

    def __post_init__(self):
        if self.t0 < 1 or self.delta < 1:
            raise InvalidParameterError(f"t0 and delta must be >= 1, got {self.t0}, {self.delta}")
        if not 0.0 <= self.mu <= 1.0:
            raise InvalidParameterError(f"mu must lie in [0, 1], got {self.mu}")

    def intervals(self, horizon):
        """(mu_i, start, end) with end exclusive, for every complete interval inside [1, horizon]."""
        if self.t0 - 1 > horizon:
            raise InvalidParameterError(f"profile starts after the horizon ({self.t0} > {horizon})")
        result = [(0.0, 1, self.t0)]
        start = self.t0
        while start + self.delta - 1 <= horizon:
            result.append((self.mu, start, start + self.delta))
            start += self.delta
        return result

    def to_dict(self):
        return {"t0": self.t0, "mu": self.mu, "delta": self.delta}


def density_goodness(trace, profile):
    """Per-interval flags: interval i is good iff its successes number at most mu_i |I_i|."""
    done = trace.success_slots[trace.success_slots >= 0]
    flags = []
    for mu, start, end in profile.intervals(trace.horizon):
        count = int(np.count_nonzero((done >= start) & (done < end)))
        flags.append(count <= mu * (end - start))
    return flags


def _finite_or_none(value):
    return None if math.isnan(value) else value


@dataclass(frozen=True, eq=False)
class LatencyStats:
    latencies: np.ndarray = field(repr=False)
    finished: np.ndarray = field(repr=False)
    q: float
    mean: float
    max: int
    mean_max: float
    quantiles: dict
    q_threshold: float
    censored_fraction: float
    all_censored: bool

    @property
    def unreliable(self):
        return self.censored_fraction >= CENSORING_LIMIT

    def to_dict(self):
        """JSON-ready fields; statistics undefined for an all-censored pool become None."""
        return {
            "parties": int(self.latencies.size),
            "finished": int(self.finished.sum()),
            "q": self.q,
            "mean": _finite_or_none(self.mean),
            "max": None if self.all_censored else self.max,
            "mean_max": _finite_or_none(self.mean_max),
            "quantiles": {f"{k:g}": v for k, v in self.quantiles.items()},
            "q_threshold": _finite_or_none(self.q_threshold),
            "censored_fraction": self.censored_fraction,
            "all_censored": self.all_censored,
            "unreliable": self.unreliable,
        }


STANDARD_QUANTILES = (0.5, 0.9, 0.99)


def _quantile(values, level):
    return float(np.quantile(values, level, method="inverted_cdf"))


def latency_stats(traces, q):
    """Pool per-party latencies; censored parties count as horizon + 1."""
    if not traces:
        raise InvalidParameterError("latency_stats needs at least one trace")
    if not 0.0 < q < 1.0:
        raise InvalidParameterError(f"q must lie in (0, 1), got {q}")
    pooled, flags, maxima = [], [], []
    for trace in traces:
        values, finished = trace.latencies()
        pooled.append(values)
        flags.append(finished)
        if values.size:
            maxima.append(int(values.max()))
    latencies = np.concatenate(pooled)
    finished = np.concatenate(flags)
    if not latencies.size:
        raise InvalidParameterError("the traces contain no parties")
    censored = 1.0 - float(finished.mean())
    all_censored = not finished.any()
    if all_censored:
        logger.warning("every one of %d parties is censored; statistics are not averaged", latencies.size)
        nan = math.nan
        return LatencyStats(latencies, finished, q, nan, -1, nan, {}, nan, censored, True)
    if censored >= CENSORING_LIMIT:
        logger.warning("%.2f%% of parties are censored at the horizon", 100.0 * censored)
    return LatencyStats(
        latencies=latencies,
        finished=finished,
        q=q,
        mean=float(latencies.mean()),
        max=int(latencies.max()),
        mean_max=float(np.mean(maxima)),
        quantiles={level: _quantile(latencies, level) for level in STANDARD_QUANTILES},
        q_threshold=_quantile(latencies, 1.0 - q),
        censored_fraction=censored,
        all_censored=False,
    )


def latency_scale(protocol, n):
    """n zeta(2 lambda + 1) for GlobalClock rules, n log2 n / log2 log2 n otherwise."""
    if protocol.is_global_clock:
        return n * zeta(2 * block_exponent(n) + 1)
    return n * math.log2(n) / math.log2(math.log2(n))


@dataclass(frozen=True)
class SurvivalEstimate:
    """Fraction of trials in which the tagged party is still unsuccessful."""

    survivors: int
    trials: int

    @property
    def probability(self):
        return self.survivors / self.trials if self.trials else math.nan

    @property
    def stderr(self):
        if not self.trials:
            return math.nan
        p = self.probability
        return math.sqrt(p * (1.0 - p) / self.trials)


def restricted_window_experiment(protocol, adversary, T, trials, rng_seed, engine=None, workers=1):
    """Survival of a party u* woken at slot 0 (party id 0) through [1, T] against the adversary."""
    if trials < 100:
        raise InvalidParameterError(f"at least 100 trials are needed, got {trials}")
    if T == 0:
        return SurvivalEstimate(trials, trials)
    if T < 0:
        raise InvalidParameterError(f"T must be >= 0, got {T}")
    engine = engine or ContentionEngine()
    schedule = combine(ObliviousSchedule({0: 1}), adversary)
    survivors = 0
    for trial in range(trials):
        trace = engine.run(protocol, schedule, T, derive_seed(rng_seed, trial))
        survivors += int(trace.success_slots[0] < 0)
    estimate = SurvivalEstimate(survivors, trials)
    logger.info("u* survived [1, %d] in %d of %d trials", T, survivors, trials)
    return estimate


def upper_ind_range_experiment(protocol, schedule, party, a, r, trials, rng_seed, engine=None):
    """Empirical Pr[party has no success in [1, a + r) | no success in [1, a)]."""
    if trials < 1 or r < 1 or a < 1:
        raise InvalidParameterError("trials, a and r must be >= 1")
    engine = engine or ContentionEngine()
    conditioned = failures = 0
    for trial in range(trials):
        trace = engine.run(protocol, schedule, a + r - 1, derive_seed(rng_seed, trial))
        record = trace.party(party)
        if record.success_slot is not None and record.success_slot < a:
            continue
        conditioned += 1
        failures += int(record.success_slot is None)
    if not conditioned:
        logger.warning("party %d always succeeded before slot %d; nothing to condition on", party, a)
    return SurvivalEstimate(failures, conditioned)
