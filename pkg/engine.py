"""Slot-accurate contention-resolution simulator.

Every party owns a coin stream indexed by its local time: at local time j it
transmits iff coin_j < p(t, j). A slot succeeds iff exactly one party
transmits; the successful party leaves the system. Parties woken at slot s
transmit from slot s + 1 on.

The slot driver and the skip-ahead driver read the same coins and therefore
produce identical traces: the first walks every slot and asks each active
party for its coin, the second jumps each party straight to its next
transmission. The cohort driver draws per-slot transmitter counts for each
group of parties sharing a wake slot; it matches the other two in
distribution and is much faster when few slots carry wake-ups. Adaptive
adversaries always run on the slot driver.
"""
import heapq
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from errors import InvalidParameterError, SimulationError
from schedule import AdaptiveAdversary
from settings import DEFAULT_COIN_BLOCK, DEFAULT_HORIZON_CAP

logger = logging.getLogger(__name__)

PRNG_NAME = "PCG64/SeedSequence"
ENUMERATION_CAP = 25
NO_PARTY = -1
COHORT_LIMIT = 256
_COHORT_CELLS = 1 << 20


def derive_seed(seed, *keys):
    """Mix non-negative integer keys into a seed; returns a 63-bit integer."""
    if seed < 0 or any(k < 0 for k in keys):
        raise InvalidParameterError(f"seed and keys must be non-negative, got {seed}, {keys}")
    state = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return int(state.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


class CoinStream:
    """Uniform coins of one party, read forward by local time starting at 1."""

    def __init__(self, run_seed, party_id, block=DEFAULT_COIN_BLOCK):
        seq = np.random.SeedSequence(run_seed, spawn_key=(party_id,))
        self._gen = np.random.Generator(np.random.PCG64(seq))
        self._block = block
        self._coins = np.zeros(0)
        self._offset = 1

    def _ensure(self, j, upto=None):
        """Make coin j available, drawing no further than local time ``upto`` when given."""
        if j < self._offset:
            raise SimulationError(f"coin {j} was already discarded (stream at {self._offset})")
        while j >= self._offset + self._coins.size:
            self._offset += self._coins.size
            size = self._block if upto is None else min(self._block, upto - self._offset + 1)
            self._coins = self._gen.random(max(size, 1))

    def coin(self, j):
        self._ensure(j)
        return float(self._coins[j - self._offset])

    def first_hit(self, j, j_max, probs_for):
        """Smallest local time j' in [j, j_max] with coin_j' < probs_for(j'), or None."""
        while j <= j_max:
            self._ensure(j, j_max)
            coins = self._coins[j - self._offset:]
            js = np.arange(j, j + coins.size, dtype=np.int64)
            if js[-1] > j_max:
                keep = j_max - j + 1
                coins, js = coins[:keep], js[:keep]
            hits = np.flatnonzero(coins < probs_for(js))
            if hits.size:
                return int(js[hits[0]])
            j = int(js[-1]) + 1
        return None


@dataclass(frozen=True)
class PartyRecord:
    id: int
    wake_slot: int
    success_slot: int | None

    @property
    def latency(self):
        if self.success_slot is None:
            return None
        return self.success_slot - self.wake_slot


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    wakeups: int
    transmitter_count: int
    success_party: int | None


def _dense(horizon, slots, values, fill=0):
    out = np.full(horizon + 1, fill, dtype=np.int64)
    out[slots] = values
    return out


@dataclass(frozen=True, eq=False)
class ExecutionTrace:
    """Complete record of one run.

    Slot data is stored only for slots with a wake-up or a transmission
    (``event_slots``); the dense per-slot arrays for 0..horizon are derived.
    ``success_slots`` holds -1 for parties without a success.
    """

    protocol: str
    horizon: int
    seed: int
    wake_slots: np.ndarray
    success_slots: np.ndarray
    event_slots: np.ndarray
    event_wakeups: np.ndarray
    event_transmitters: np.ndarray
    event_success_party: np.ndarray
    driver: str = "skip"
    prng: str = PRNG_NAME

    @property
    def n_parties(self):
        return int(self.wake_slots.size)

    @property
    def successes(self):
        return int(np.count_nonzero(self.success_slots >= 0))

    @cached_property
    def wakeups(self):
        return _dense(self.horizon, self.event_slots, self.event_wakeups)

    @cached_property
    def transmitters(self):
        return _dense(self.horizon, self.event_slots, self.event_transmitters)

    @cached_property
    def success_party(self):
        return _dense(self.horizon, self.event_slots, self.event_success_party, NO_PARTY)

    @property
    def parties(self):
        return [self.party(u) for u in range(self.n_parties)]

    @property
    def slots(self):
        return self.slot_records()

    def party(self, party_id):
        if not 0 <= party_id < self.n_parties:
            raise InvalidParameterError(f"unknown party id {party_id}")
        done = int(self.success_slots[party_id])
        return PartyRecord(party_id, int(self.wake_slots[party_id]), done if done >= 0 else None)

    def slot_records(self):
        return [
            SlotRecord(t, int(w), int(x), int(s) if s >= 0 else None)
            for t, (w, x, s) in enumerate(zip(self.wakeups, self.transmitters, self.success_party))
        ]

    def active_at(self, t):
        """A[t]: woken before t and not successful before t."""
        pending = (self.success_slots < 0) | (self.success_slots >= t)
        return np.flatnonzero((self.wake_slots < t) & pending)

    def succeeded_before(self, t):
        """Succ[t]: parties whose success slot is < t."""
        return np.flatnonzero((self.success_slots >= 0) & (self.success_slots < t))

    def latencies(self):
        """(latencies, finished): latency per party; censored parties count as horizon + 1."""
        finished = self.success_slots >= 0
        values = np.where(finished, self.success_slots - self.wake_slots, self.horizon + 1)
        return values, finished


def latency_of(trace, party):
    """success_slot - wake_slot, or None when the party never succeeded."""
    return trace.party(party).latency


class HistoryView:
    """What an adaptive adversary sees when choosing the wake-ups of ``slot``.

    The outcome of ``slot`` itself is already public; coin flips are not.
    """

    def __init__(self, slot, wakeups, transmitters, success_party, woken, succeeded):
        self.slot = slot
        self._wakeups = wakeups
        self._transmitters = transmitters
        self._success_party = success_party
        self.total_woken = woken
        self.total_successes = succeeded

    @property
    def active_count(self):
        return self.total_woken - self.total_successes

    @property
    def wakeups(self):
        return self._wakeups[:self.slot + 1]

    @property
    def transmitters(self):
        return self._transmitters[:self.slot + 1]

    @property
    def success_parties(self):
        return self._success_party[:self.slot + 1]

    @property
    def success_now(self):
        return self.slot >= 1 and self._success_party[self.slot] >= 0


class _SlotLog:
    """Per-slot outcomes for history views, grown in chunks up to slot ``horizon``."""

    CHUNK = 4096

    def __init__(self, horizon):
        self.limit = horizon + 1
        size = min(self.limit, self.CHUNK)
        self.wakeups = np.zeros(size, dtype=np.int64)
        self.transmitters = np.zeros(size, dtype=np.int64)
        self.success_party = np.full(size, NO_PARTY, dtype=np.int64)

    @property
    def size(self):
        return int(self.wakeups.size)

    def reserve(self, t):
        if t < self.size:
            return
        extra = min(self.limit, max(t + 1, 2 * self.size)) - self.size
        self.wakeups = np.concatenate([self.wakeups, np.zeros(extra, dtype=np.int64)])
        self.transmitters = np.concatenate([self.transmitters, np.zeros(extra, dtype=np.int64)])
        self.success_party = np.concatenate([self.success_party, np.full(extra, NO_PARTY, dtype=np.int64)])

    def view(self, t, woken, succeeded):
        return HistoryView(t, self.wakeups, self.transmitters, self.success_party, woken, succeeded)


class _Recorder:
    """Collects event slots while a driver runs."""

    def __init__(self):
        self._wakes = {}
        self._slots, self._counts, self._winners = [], [], []
        self._bulk = []

    def wake(self, t, count):
        if count:
            self._wakes[t] = self._wakes.get(t, 0) + count

    def transmit(self, t, count, winner):
        if count:
            self._slots.append(t)
            self._counts.append(count)
            self._winners.append(winner)

    def transmit_many(self, slots, counts):
        """Unsuccessful slots in bulk; zero counts are skipped."""
        keep = counts > 0
        if keep.any():
            self._bulk.append((slots[keep], counts[keep]))

    def arrays(self):
        tx_slots = np.concatenate([np.asarray(self._slots, dtype=np.int64)] + [s for s, _ in self._bulk])
        tx_counts = np.concatenate([np.asarray(self._counts, dtype=np.int64)] + [c for _, c in self._bulk])
        tx_winners = np.concatenate([np.asarray(self._winners, dtype=np.int64)]
                                    + [np.full(s.size, NO_PARTY, dtype=np.int64) for s, _ in self._bulk])
        wake_slots = np.fromiter(self._wakes, dtype=np.int64, count=len(self._wakes))
        wake_counts = np.fromiter(self._wakes.values(), dtype=np.int64, count=len(self._wakes))
        slots = np.union1d(wake_slots, tx_slots).astype(np.int64)
        wakeups = np.zeros(slots.size, dtype=np.int64)
        transmitters = np.zeros(slots.size, dtype=np.int64)
        winners = np.full(slots.size, NO_PARTY, dtype=np.int64)
        wakeups[np.searchsorted(slots, wake_slots)] = wake_counts
        at = np.searchsorted(slots, tx_slots)
        transmitters[at] = tx_counts
        winners[at] = tx_winners
        return slots, wakeups, transmitters, winners


DRIVERS = ("auto", "slot", "skip", "cohort")


class ContentionEngine:
    """Runs protocols against schedules up to a horizon.

    ``driver`` picks the simulation path for oblivious schedules. ``auto``
    uses the cohort driver when the schedule has at most ``cohort_limit``
    distinct wake slots and the skip-ahead driver otherwise.
    """

    def __init__(self, horizon_cap=DEFAULT_HORIZON_CAP, coin_block=DEFAULT_COIN_BLOCK, driver="auto",
                 cohort_limit=COHORT_LIMIT):
        if horizon_cap < 1 or coin_block < 1:
            raise InvalidParameterError("horizon_cap and coin_block must be >= 1")
        if driver not in DRIVERS:
            raise InvalidParameterError(f"unknown driver {driver!r}; expected one of {', '.join(DRIVERS)}")
        self.horizon_cap = horizon_cap
        self.coin_block = coin_block
        self.driver = driver
        self.cohort_limit = cohort_limit

    @classmethod
    def from_settings(cls, settings, driver="auto"):
        return cls(settings.horizon_cap, settings.coin_block, driver)

    def driver_for(self, schedule):
        if isinstance(schedule, AdaptiveAdversary):
            return "slot"
        if self.driver != "auto":
            return self.driver
        return "cohort" if len(schedule.wake_counts) <= self.cohort_limit else "skip"

    def run(self, protocol, schedule, horizon, rng_seed):
        if horizon < 1:
            raise InvalidParameterError(f"horizon must be >= 1, got {horizon}")
        if horizon > self.horizon_cap:
            raise SimulationError(f"horizon {horizon} exceeds the cap of {self.horizon_cap} slots")
        if rng_seed < 0:
            raise InvalidParameterError(f"seed must be non-negative, got {rng_seed}")
        driver = self.driver_for(schedule)
        if not isinstance(schedule, AdaptiveAdversary):
            if schedule.last_slot > horizon:
                logger.warning("dropping %d arrivals scheduled after slot %d",
                               sum(c for s, c in schedule.wake_counts.items() if s > horizon), horizon)
        return getattr(self, f"_run_{driver}")(protocol, schedule, horizon, rng_seed)

    def _finish(self, protocol, horizon, seed, wake, done, recorder, driver):
        slots, wakeups, transmitters, winners = recorder.arrays()
        trace = ExecutionTrace(
            protocol=protocol.name,
            horizon=horizon,
            seed=seed,
            wake_slots=np.asarray(wake, dtype=np.int64),
            success_slots=np.asarray(done, dtype=np.int64),
            event_slots=slots,
            event_wakeups=wakeups,
            event_transmitters=transmitters,
            event_success_party=winners,
            driver=driver,
        )
        logger.debug("%s run (%s driver): %d parties, %d successes, horizon %d, seed %d",
                     protocol.name, driver, trace.n_parties, trace.successes, horizon, seed)
        return trace

    def _run_skip(self, protocol, schedule, horizon, seed):
        wake = schedule.wake_slots()
        wake = wake[wake <= horizon]
        done = np.full(wake.size, NO_PARTY, dtype=np.int64)
        recorder = _Recorder()
        for slot, count in schedule.wake_counts.items():
            if slot <= horizon:
                recorder.wake(slot, count)

        streams = {}
        pending = []

        def schedule_next(u, first_local):
            stream = streams.get(u)
            if stream is None:
                stream = streams[u] = CoinStream(seed, u, self.coin_block)
            t_u = int(wake[u])
            hit = stream.first_hit(first_local, horizon - t_u,
                                   lambda js: protocol.prob_array(js + t_u, js))
            if hit is None:
                del streams[u]
            else:
                heapq.heappush(pending, (t_u + hit, u))

        for u in range(wake.size):
            schedule_next(u, 1)
        while pending:
            t = pending[0][0]
            fired = []
            while pending and pending[0][0] == t:
                fired.append(heapq.heappop(pending)[1])
            if len(fired) == 1:
                winner = fired[0]
                done[winner] = t
                del streams[winner]
                recorder.transmit(t, 1, winner)
                continue
            recorder.transmit(t, len(fired), NO_PARTY)
            for u in fired:
                schedule_next(u, t - int(wake[u]) + 1)
        return self._finish(protocol, horizon, seed, wake, done, recorder, "skip")

    def _run_slot(self, protocol, schedule, horizon, seed):
        adaptive = isinstance(schedule, AdaptiveAdversary)
        if adaptive:
            schedule.start()
        wake, done, streams = [], [], []
        active = []
        recorder = _Recorder()
        log = _SlotLog(horizon) if adaptive else None
        succeeded = 0
        last_arrival = -1 if adaptive else schedule.last_slot

        for t in range(horizon + 1):
            if t >= 1 and active:
                ids = np.asarray(active, dtype=np.int64)
                js = t - np.asarray([wake[u] for u in active], dtype=np.int64)
                probs = protocol.prob_array(np.full(ids.size, t, dtype=np.int64), js)
                coins = np.fromiter((streams[u].coin(int(j)) for u, j in zip(active, js)),
                                    dtype=np.float64, count=ids.size)
                fired = ids[coins < probs]
                winner = int(fired[0]) if fired.size == 1 else NO_PARTY
                if adaptive:
                    log.reserve(t)
                    log.transmitters[t] = fired.size
                    log.success_party[t] = winner
                recorder.transmit(t, int(fired.size), winner)
                if winner != NO_PARTY:
                    done[winner] = t
                    active.remove(winner)
                    succeeded += 1
            if adaptive:
                log.reserve(t)
                count = schedule.request(log.view(t, len(wake), succeeded))
            else:
                count = schedule.count_at(t)
            if count:
                if adaptive:
                    log.wakeups[t] = count
                recorder.wake(t, count)
                for _ in range(count):
                    u = len(wake)
                    wake.append(t)
                    done.append(NO_PARTY)
                    streams.append(CoinStream(seed, u, self.coin_block))
                    active.append(u)
            if not active and (schedule.remaining == 0 if adaptive else t >= last_arrival):
                break
        return self._finish(protocol, horizon, seed, wake, done, recorder, "slot")

    def _run_cohort(self, protocol, schedule, horizon, seed):
        """Binomial transmitter counts per wake-slot cohort.

        Parties woken in the same slot share their local time, so under a
        memoryless rule they are exchangeable: each slot a cohort sends
        Binomial(active, p) transmitters, and a lone transmitter is drawn
        uniformly from its cohort. Equal in distribution to the coin drivers,
        not coin for coin.
        """
        wake = schedule.wake_slots()
        wake = wake[wake <= horizon]
        done = np.full(wake.size, NO_PARTY, dtype=np.int64)
        recorder = _Recorder()
        cohort_slots = np.array(sorted(s for s in schedule.wake_counts if s <= horizon), dtype=np.int64)
        for s in cohort_slots.tolist():
            recorder.wake(s, schedule.wake_counts[s])
        starts = np.searchsorted(wake, cohort_slots)
        ends = np.append(starts[1:], wake.size)
        members = [list(range(int(a), int(b))) for a, b in zip(starts, ends)]
        remaining = ends - starts
        gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

        block = 64
        t = int(cohort_slots[0]) + 1 if cohort_slots.size else horizon + 1
        while t <= horizon:
            live = np.flatnonzero((cohort_slots < t) & (remaining > 0))
            upcoming = int(np.searchsorted(cohort_slots, t))
            if not live.size:
                if upcoming >= cohort_slots.size:
                    break
                t = int(cohort_slots[upcoming]) + 1
                continue
            width = min(block, max(16, _COHORT_CELLS // live.size), horizon + 1 - t)
            if upcoming < cohort_slots.size:
                width = min(width, int(cohort_slots[upcoming]) + 1 - t)

            ts = np.arange(t, t + width, dtype=np.int64)
            local = ts[None, :] - cohort_slots[live, None]
            probs = protocol.prob_array(np.broadcast_to(ts, local.shape), local)
            counts = gen.binomial(remaining[live, None], probs)
            totals = counts.sum(axis=0)
            lone = np.flatnonzero(totals == 1)
            stop = int(lone[0]) if lone.size else width
            recorder.transmit_many(ts[:stop], totals[:stop])
            if not lone.size:
                t += width
                block = min(block * 2, _COHORT_CELLS)
                continue

            slot = t + stop
            cohort = int(live[np.argmax(counts[:, stop])])
            ids = members[cohort]
            pick = int(gen.integers(len(ids)))
            ids[pick], ids[-1] = ids[-1], ids[pick]
            winner = ids.pop()
            remaining[cohort] -= 1
            done[winner] = slot
            recorder.transmit(slot, 1, winner)
            t = slot + 1
            block = max(16, block // 2)
        return self._finish(protocol, horizon, seed, wake, done, recorder, "cohort")


def run(protocol, schedule, horizon, rng_seed, engine=None):
    """Simulate one execution with the default engine settings."""
    return (engine or ContentionEngine()).run(protocol, schedule, horizon, rng_seed)


def _run_one(args):
    engine, protocol, schedule, horizon, seed = args
    return engine.run(protocol, schedule, horizon, seed)


def run_trials(protocol, schedule, horizon, seed, trials, workers=1, engine=None):
    """Independent seeded runs, ordered by trial index."""
    if trials < 1:
        raise InvalidParameterError(f"trials must be >= 1, got {trials}")
    engine = engine or ContentionEngine()
    jobs = [(engine, protocol, schedule, horizon, derive_seed(seed, trial)) for trial in range(trials)]
    logger.info("running %d trials of %s (horizon %d, %d workers)", trials, protocol.name, horizon, workers)
    if workers <= 1 or isinstance(schedule, AdaptiveAdversary):
        traces = [_run_one(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_run_one, jobs))
    logger.info("finished %d trials of %s", trials, protocol.name)
    return traces


def _check_probs(probs):
    probs = [float(p) for p in probs]
    if len(probs) > ENUMERATION_CAP:
        raise InvalidParameterError(f"at most {ENUMERATION_CAP} probabilities, got {len(probs)}")
    if any(not 0.0 <= p <= 1.0 for p in probs):
        raise InvalidParameterError("probabilities must lie in [0, 1]")
    return probs


def single_slot_success_prob(probs):
    """Pr[exactly one transmitter] = sum_u p_u prod_{v != u} (1 - p_v)."""
    probs = _check_probs(probs)
    return math.fsum(
        p * math.prod(1.0 - q for v, q in enumerate(probs) if v != u)
        for u, p in enumerate(probs)
    )


def transmitter_count_distribution(probs):
    """Pr[k transmitters] for k = 0..len(probs)."""
    probs = _check_probs(probs)
    dist = np.zeros(len(probs) + 1)
    dist[0] = 1.0
    for i, p in enumerate(probs, start=1):
        dist[1:i + 1] = dist[1:i + 1] * (1.0 - p) + dist[:i] * p
        dist[0] *= 1.0 - p
    return dist
