"""Aggregate contention, low-probability thresholds, filters and prefix sums.

Quantities in this module follow the lower-bound notation, so B_beta and every
threshold use natural logarithms.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from errors import InvalidParameterError

logger = logging.getLogger(__name__)

B_BETA_FLAT_UNTIL = 16


def b_beta(t, beta):
    """B_beta(t): 1 for t <= 16, else min(1, ln(t)^beta / t)."""
    if beta < math.e:
        raise InvalidParameterError(f"beta must be >= e, got {beta}")
    if t < 1:
        raise InvalidParameterError(f"t must be >= 1, got {t}")
    if t <= B_BETA_FLAT_UNTIL:
        return 1.0
    return min(1.0, math.log(t) ** beta / t)


def b_beta_array(ts, beta):
    """Vectorized B_beta."""
    if beta < math.e:
        raise InvalidParameterError(f"beta must be >= e, got {beta}")
    t = np.asarray(ts, dtype=np.float64)
    with np.errstate(divide="ignore"):
        tail = np.minimum(1.0, np.log(np.maximum(t, 1.0)) ** beta / t)
    return np.where(t <= B_BETA_FLAT_UNTIL, 1.0, tail)


class FilterKind(Enum):
    ALL = "all"
    LOW_BETA = "low_beta"
    LOW_BETA_FROM = "low_beta_from"
    CUSTOM = "custom"


@dataclass(frozen=True)
class FilterSpec:
    """An indicator on local time used to filter contention and prefix sums."""

    kind: FilterKind = FilterKind.ALL
    beta: float | None = None
    m: int | None = None
    indicator: Callable[[int], int] | None = None

    def __post_init__(self):
        if self.kind in (FilterKind.LOW_BETA, FilterKind.LOW_BETA_FROM):
            if self.beta is None or self.beta < math.e:
                raise InvalidParameterError(f"low_beta filters need beta >= e, got {self.beta}")
        if self.kind is FilterKind.LOW_BETA_FROM and (self.m is None or self.m < 1):
            raise InvalidParameterError(f"low_beta_from needs m >= 1, got {self.m}")
        if self.kind is FilterKind.CUSTOM and self.indicator is None:
            raise InvalidParameterError("a custom filter needs an indicator")

    @classmethod
    def all(cls):
        return cls(FilterKind.ALL)

    @classmethod
    def low_beta(cls, beta):
        return cls(FilterKind.LOW_BETA, beta=beta)

    @classmethod
    def low_beta_from(cls, beta, m):
        return cls(FilterKind.LOW_BETA_FROM, beta=beta, m=int(m))

    @classmethod
    def custom(cls, indicator):
        return cls(FilterKind.CUSTOM, indicator=indicator)

    @property
    def needs_local_rule(self):
        return self.kind in (FilterKind.LOW_BETA, FilterKind.LOW_BETA_FROM)

    def mask(self, protocol, local_times):
        """Boolean indicator over an array of local times."""
        js = np.asarray(local_times, dtype=np.int64)
        if self.kind is FilterKind.ALL:
            return np.ones(js.shape, dtype=bool)
        if self.kind is FilterKind.CUSTOM:
            return np.fromiter((bool(self.indicator(int(j))) for j in js.ravel()),
                               dtype=bool, count=js.size).reshape(js.shape)
        if protocol.is_global_clock:
            raise InvalidParameterError(f"low_beta filters need a LocalClock rule, got {protocol.name}")
        low = protocol.local_prob_array(js) <= b_beta_array(js, self.beta)
        if self.kind is FilterKind.LOW_BETA_FROM:
            low &= js >= self.m
        return low


ALL = FilterSpec.all()


def _require_local(protocol, what):
    if protocol.is_global_clock:
        raise InvalidParameterError(f"{what} is undefined for GlobalClock protocol {protocol.name}")


def filtered_profile(protocol, k, filter_spec=ALL):
    """p^I(1..k) as an array (index 0 is local time 1)."""
    _require_local(protocol, "a local probability profile")
    js = np.arange(1, k + 1, dtype=np.int64)
    return np.where(filter_spec.mask(protocol, js), protocol.local_prob_array(js), 0.0)


def s_prefix_series(protocol, k, filter_spec=ALL):
    """Cumulative s^I(0..k); entry i is the sum over local times 1..i."""
    if k < 0:
        raise InvalidParameterError(f"k must be >= 0, got {k}")
    series = np.zeros(k + 1)
    np.cumsum(filtered_profile(protocol, k, filter_spec), out=series[1:])
    return series


def s_prefix(protocol, k, filter_spec=ALL):
    """s^I(k) = sum_{i<=k} p(i) I(i): expected attempts in the first k local slots."""
    if k < 0:
        raise InvalidParameterError(f"k must be >= 0, got {k}")
    return float(np.sum(filtered_profile(protocol, k, filter_spec)))


def n_high(protocol, k, beta):
    """N^high_beta(k): number of local times i <= k with p(i) > B_beta(i)."""
    _require_local(protocol, "N^high")
    js = np.arange(1, k + 1, dtype=np.int64)
    return int(np.count_nonzero(protocol.local_prob_array(js) > b_beta_array(js, beta)))


@dataclass(frozen=True, eq=False)
class ContentionSeries:
    """Static (and optionally dynamic) contention for slots 1..t_max."""

    static_vals: np.ndarray
    dynamic_vals: np.ndarray | None
    filter_spec: FilterSpec

    @property
    def t_max(self):
        return int(self.static_vals.size)

    @property
    def slots(self):
        return np.arange(1, self.t_max + 1)

    def static_at(self, t):
        return float(self.static_vals[t - 1])

    def dynamic_at(self, t):
        if self.dynamic_vals is None:
            raise InvalidParameterError("this series carries no dynamic contention")
        return float(self.dynamic_vals[t - 1])

    def static_min(self, first, last):
        """Minimum static contention over slots first..last (inclusive)."""
        if last < first:
            return math.inf
        return float(self.static_vals[first - 1:last].min())


def _causal_convolve(wake_counts, kernel):
    """out[t-1] = sum_{s < t} wake_counts[s] * kernel[t - s] for t = 1..len(kernel)-1.

    Runs over distinct wake slots only.
    """
    t_max = kernel.size - 1
    total = np.zeros(t_max)
    for s in np.flatnonzero(wake_counts):
        total[s:] += wake_counts[s] * kernel[1:t_max - s + 1]
    return total


def _per_slot_sum(wake_counts, t_max, weight):
    """Generic static sum for rules that also read the global clock."""
    total = np.zeros(t_max)
    for s in np.flatnonzero(wake_counts):
        ts = np.arange(s + 1, t_max + 1, dtype=np.int64)
        if ts.size:
            total[s:] += wake_counts[s] * weight(ts, ts - s)
    return total


def _filtered_weight(protocol, filter_spec):
    def weight(ts, js):
        return np.where(filter_spec.mask(protocol, js), protocol.prob_array(ts, js), 0.0)
    return weight


def _static_from_counts(wake_counts, protocol, filter_spec, t_max):
    wake_counts = np.asarray(wake_counts[:t_max], dtype=np.int64)
    if protocol.is_global_clock:
        return _per_slot_sum(wake_counts, t_max, _filtered_weight(protocol, filter_spec))
    kernel = np.zeros(t_max + 1)
    kernel[1:] = filtered_profile(protocol, t_max, filter_spec)
    return _causal_convolve(wake_counts, kernel)


def static_contention(schedule, protocol, filter_spec=ALL, t_max=None):
    """sigma-hat^I[t] = sum over parties woken before t of p^I(t - t_u), t = 1..t_max."""
    if t_max is None or t_max < 1:
        raise InvalidParameterError(f"t_max must be >= 1, got {t_max}")
    counts = schedule.as_array(t_max)
    return ContentionSeries(_static_from_counts(counts, protocol, filter_spec, t_max), None, filter_spec)


def _party_contribution(protocol, filter_spec, wake, first, t_max):
    """p^I(t - wake) for t = first..t_max."""
    ts = np.arange(first, t_max + 1, dtype=np.int64)
    return _filtered_weight(protocol, filter_spec)(ts, ts - wake)


def succeeded_contention(trace, protocol, filter_spec, t0):
    """sigma^I[t; Succ[t0]]: what parties successful before t0 would still contribute."""
    t_max = trace.horizon
    total = np.zeros(t_max)
    for party in np.flatnonzero((trace.success_slots >= 0) & (trace.success_slots < t0)):
        wake = int(trace.wake_slots[party])
        if wake + 1 <= t_max:
            total[wake:] += _party_contribution(protocol, filter_spec, wake, wake + 1, t_max)
    return total


def dynamic_contention(trace, protocol, filter_spec=ALL, survivors_as_of=None):
    """sigma^I[t; A[t | t0]] per slot, or sigma^I[t; A[t]] when t0 is absent."""
    t_max = trace.horizon
    if survivors_as_of is not None and not 1 <= survivors_as_of <= t_max:
        raise InvalidParameterError(f"survivors_as_of must lie in [1, {t_max}], got {survivors_as_of}")
    static = _static_from_counts(trace.wakeups, protocol, filter_spec, t_max)
    if survivors_as_of is not None:
        dynamic = static - succeeded_contention(trace, protocol, filter_spec, survivors_as_of)
    else:
        dynamic = static.copy()
        for party in np.flatnonzero(trace.success_slots >= 0):
            wake, done = int(trace.wake_slots[party]), int(trace.success_slots[party])
            if done + 1 <= t_max:
                dynamic[done:] -= _party_contribution(protocol, filter_spec, wake, done + 1, t_max)
    # float cancellation can leave -1e-17 where every party has left
    np.maximum(dynamic, 0.0, out=dynamic)
    return ContentionSeries(static, dynamic, filter_spec)


def tau_series(schedule, t_max):
    """tau(t) = sum over parties woken before t of 1/(t - t_u), for t = 1..t_max."""
    kernel = np.zeros(t_max + 1)
    kernel[1:] = 1.0 / np.arange(1, t_max + 1)
    return _causal_convolve(np.asarray(schedule.as_array(t_max), dtype=np.int64), kernel)


def tau(schedule, t):
    """The natural BEB contention at slot t (static form)."""
    if t < 1:
        raise InvalidParameterError(f"t must be >= 1, got {t}")
    return float(tau_series(schedule, t)[t - 1])
