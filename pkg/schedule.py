"""Wake-up schedules: basic generators, adversary constructions and adaptive callbacks.

Slots are integers >= 0. A party woken at slot s first transmits at slot s + 1.
The adversary constructions use natural logarithms throughout.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from contention import FilterSpec, s_prefix, static_contention
from errors import InvalidParameterError, SimulationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObliviousSchedule:
    """Per-slot wake counts fixed before the execution starts."""

    wake_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        cleaned = {}
        for slot, count in self.wake_counts.items():
            slot, count = int(slot), int(count)
            if slot < 0:
                raise InvalidParameterError(f"wake slots must be >= 0, got {slot}")
            if count < 0:
                raise InvalidParameterError(f"wake counts must be >= 0, got {count} at slot {slot}")
            if count:
                cleaned[slot] = cleaned.get(slot, 0) + count
        object.__setattr__(self, "wake_counts", dict(sorted(cleaned.items())))

    @classmethod
    def from_wake_slots(cls, slots):
        values, counts = np.unique(np.asarray(slots, dtype=np.int64), return_counts=True)
        return cls(dict(zip(values.tolist(), counts.tolist())))

    @property
    def total_parties(self):
        return sum(self.wake_counts.values())

    @property
    def last_slot(self):
        """Latest wake slot, or -1 for an empty schedule."""
        return max(self.wake_counts, default=-1)

    def count_at(self, slot):
        return self.wake_counts.get(slot, 0)

    def as_array(self, length):
        """Dense wake counts for slots 0..length-1; later arrivals are left out."""
        counts = np.zeros(length, dtype=np.int64)
        for slot, count in self.wake_counts.items():
            if slot < length:
                counts[slot] = count
        return counts

    def wake_slots(self):
        """One sorted entry per party."""
        if not self.wake_counts:
            return np.zeros(0, dtype=np.int64)
        slots = np.fromiter(self.wake_counts.keys(), dtype=np.int64)
        counts = np.fromiter(self.wake_counts.values(), dtype=np.int64)
        return np.repeat(slots, counts)


def combine(*schedules):
    """Slot-wise sum of several oblivious schedules."""
    merged = {}
    for schedule in schedules:
        for slot, count in schedule.wake_counts.items():
            merged[slot] = merged.get(slot, 0) + count
    return ObliviousSchedule(merged)


def synchronous(n):
    """All n parties wake at slot 0."""
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    return ObliviousSchedule({0: n})


def batch_per_slot(rate, duration):
    """`rate` parties at every slot 0..duration-1."""
    if rate < 1 or duration < 1:
        raise InvalidParameterError(f"rate and duration must be >= 1, got {rate}, {duration}")
    return ObliviousSchedule({slot: rate for slot in range(duration)})


def uniform_random(count, range_end, rng_seed):
    """`count` i.i.d. wake slots, uniform on 0..range_end-1."""
    if count < 0:
        raise InvalidParameterError(f"count must be >= 0, got {count}")
    if range_end < 1:
        raise InvalidParameterError(f"range_end must be >= 1, got {range_end}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return ObliviousSchedule.from_wake_slots(rng.integers(0, range_end, size=count))


def simple_adversary_params(n, eta):
    """(rate, duration) = (ceil(10 ln n / eta), floor(n / ln^2 n))."""
    if n < 16:
        raise InvalidParameterError(f"the simple adversary needs n >= 16, got {n}")
    if not 0.0 < eta <= 0.5:
        raise InvalidParameterError(f"eta must lie in (0, 1/2], got {eta}")
    ln_n = math.log(n)
    return math.ceil(10.0 * ln_n / eta), math.floor(n / ln_n ** 2)


def simple_adversary(n, eta):
    """Enough arrivals per slot that static contention stays >= 10 ln n on [1, n/ln^2 n]."""
    rate, duration = simple_adversary_params(n, eta)
    return batch_per_slot(rate, duration)


def simple_adversary_failure_bound(n, t0):
    """Union bound on some slot of [1, t0] seeing at most one transmitter."""
    ln_n = math.log(n)
    return t0 * (10.0 * math.e * ln_n + 1.0) / float(n) ** 10


def _require_local_rule(protocol):
    if protocol.is_global_clock:
        raise InvalidParameterError(f"adversary constructions need a LocalClock rule, got {protocol.name}")
    if protocol.eta <= 0.0:
        raise InvalidParameterError(f"{protocol.name} has eta = 0")


def layered_windows(n, protocol, beta, gamma):
    """(T0, T1, m) of the layered construction; T1 is clamped at 0 and m = isqrt(n) + 1."""
    if n < 16:
        raise InvalidParameterError(f"the layered adversary needs n >= 16, got {n}")
    if gamma <= 0:
        raise InvalidParameterError(f"gamma must be > 0, got {gamma}")
    low = FilterSpec.low_beta(beta)
    t0 = math.floor(n / math.log(n) ** 2)
    root = math.isqrt(n)
    gap = s_prefix(protocol, t0, low) - s_prefix(protocol, root, low)
    t1 = max(0, math.floor(n * gap / (8.0 * gamma * math.log(math.log(n)))))
    return t0, t1, root + 1


@dataclass(frozen=True)
class LayeredAdversaryReport:
    """Outcome of the rejection-sampled layered construction.

    ``schedule`` is None when no sample passed verification.
    """

    schedule: ObliviousSchedule | None
    t0: int
    t1: int
    verified: bool
    resample_count: int
    window_end: int
    simple_min: float
    filtered_min: float


def layered_adversary(n, protocol, beta, gamma, rng_seed, max_resamples=100):
    """Simple layer on [0, T0) plus n/3 uniform arrivals on [0, T1), resampled until verified."""
    _require_local_rule(protocol)
    if beta < 10:
        raise InvalidParameterError(f"the layered construction needs beta >= 10, got {beta}")
    if max_resamples < 0:
        raise InvalidParameterError(f"max_resamples must be >= 0, got {max_resamples}")
    t0, t1, m = layered_windows(n, protocol, beta, gamma)
    window_end = max(t0, t1)
    if t1 <= t0:
        logger.warning("layered window is degenerate at n=%d: T0=%d, T1=%d", n, t0, t1)
    simple = simple_adversary(n, protocol.eta)
    simple_floor = 10.0 * math.log(n)
    filtered_floor = gamma * math.log(math.log(n))
    filtered = FilterSpec.low_beta_from(beta, m)
    rng = np.random.default_rng(rng_seed)

    simple_min = filtered_min = math.nan
    for attempt in range(max_resamples + 1):
        layer = uniform_random(n // 3, t1, rng) if t1 >= 1 else ObliviousSchedule()
        candidate = combine(simple, layer)
        simple_min = static_contention(candidate, protocol, t_max=window_end).static_min(1, t0)
        if t1 >= t0:
            filtered_min = static_contention(candidate, protocol, filtered, t1).static_min(t0, t1)
        else:
            filtered_min = math.inf
        if simple_min >= simple_floor and filtered_min >= filtered_floor:
            logger.info("layered adversary verified after %d resamples (n=%d, T0=%d, T1=%d)",
                        attempt, n, t0, t1)
            return LayeredAdversaryReport(candidate, t0, t1, True, attempt, window_end,
                                          simple_min, filtered_min)
        logger.debug("layered sample %d rejected: simple min %.4f, filtered min %.4f",
                     attempt, simple_min, filtered_min)
    logger.info("layered adversary unverified after %d resamples (n=%d)", max_resamples, n)
    return LayeredAdversaryReport(None, t0, t1, False, max_resamples, window_end,
                                  simple_min, filtered_min)


def restricted_window_adversary(n, protocol, rng_seed):
    """Simple layer plus n/3 parties uniform on [0, T1) with T1 = floor(s(T0) n / (40 ln n))."""
    _require_local_rule(protocol)
    simple = simple_adversary(n, protocol.eta)
    t0 = math.floor(n / math.log(n) ** 2)
    t1 = math.floor(s_prefix(protocol, t0) * n / (40.0 * math.log(n)))
    if t1 < 1:
        return simple
    return combine(simple, uniform_random(n // 3, t1, rng_seed))


def restricted_window_lower_bound(protocol, n, beta):
    """floor(n (s^low(n/ln^2 n) - s^low(sqrt n)) / (40 beta ln ln n)), clamped at 0."""
    _require_local_rule(protocol)
    if n < 16:
        raise InvalidParameterError(f"n must be >= 16, got {n}")
    low = FilterSpec.low_beta(beta)
    gap = (s_prefix(protocol, math.floor(n / math.log(n) ** 2), low)
           - s_prefix(protocol, math.isqrt(n), low))
    return max(0, math.floor(n * gap / (40.0 * beta * math.log(math.log(n)))))


def high_slot_blocker(protocol, window, n, beta):
    """Wake ceil(4 ln n / eta) parties at t - 1 for every high slot t of the window."""
    _require_local_rule(protocol)
    first, last = window
    if first < 1 or last < first:
        raise InvalidParameterError(f"window must satisfy 1 <= first <= last, got {window}")
    rate = math.ceil(4.0 * math.log(n) / protocol.eta)
    low = FilterSpec.low_beta(beta)
    js = np.arange(first, last + 1, dtype=np.int64)
    high = js[~low.mask(protocol, js)]
    return ObliviousSchedule({int(t) - 1: rate for t in high})


class AdaptiveAdversary:
    """Wake-ups decided slot by slot from the public history, capped by a budget."""

    def __init__(self, decide, budget):
        if budget < 0:
            raise InvalidParameterError(f"budget must be >= 0, got {budget}")
        self.decide = decide
        self.budget = int(budget)
        self.spent = 0

    @property
    def remaining(self):
        return self.budget - self.spent

    def start(self):
        self.spent = 0

    def request(self, history):
        """Wake-ups for the slot the history leads up to, clamped to the budget."""
        wanted = int(self.decide(history))
        if wanted < 0:
            raise SimulationError(f"adversary asked for {wanted} wake-ups at slot {history.slot}")
        granted = min(wanted, self.remaining)
        self.spent += granted
        return granted


def adaptive_wrap(decide, budget):
    return AdaptiveAdversary(decide, budget)
