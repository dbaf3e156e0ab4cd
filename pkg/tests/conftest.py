import numpy as np
import pytest

from engine import NO_PARTY, ContentionEngine, ExecutionTrace
from protocols import parse_protocol


def make_trace(wake_slots, success_slots, horizon, protocol="beb", seed=0):
    """A hand-built trace: every success is a lone transmission, every wake-up is recorded."""
    wake = np.asarray(wake_slots, dtype=np.int64)
    done = np.asarray([NO_PARTY if s is None else s for s in success_slots], dtype=np.int64)
    events = {}
    for slot in wake.tolist():
        events.setdefault(slot, [0, 0, NO_PARTY])[0] += 1
    for party, slot in enumerate(done.tolist()):
        if slot >= 0:
            row = events.setdefault(slot, [0, 0, NO_PARTY])
            row[1], row[2] = 1, party
    slots = np.array(sorted(events), dtype=np.int64)
    table = np.array([events[s] for s in slots.tolist()], dtype=np.int64).reshape(-1, 3)
    return ExecutionTrace(
        protocol=protocol,
        horizon=horizon,
        seed=seed,
        wake_slots=wake,
        success_slots=done,
        event_slots=slots,
        event_wakeups=table[:, 0].copy(),
        event_transmitters=table[:, 1].copy(),
        event_success_party=table[:, 2].copy(),
        driver="manual",
    )


def random_trace(rng, n_parties, horizon):
    """Random wake slots with random successes after waking, at most one per slot."""
    wake = np.sort(rng.integers(0, horizon // 2, n_parties))
    free = set(range(1, horizon + 1))
    done = []
    for w in wake.tolist():
        if rng.random() < 0.6:
            candidates = [t for t in range(w + 1, horizon + 1) if t in free]
            if candidates:
                t = int(rng.choice(candidates))
                free.discard(t)
                done.append(t)
                continue
        done.append(None)
    return make_trace(wake, done, horizon)


@pytest.fixture
def beb():
    return parse_protocol("beb")


@pytest.fixture
def exp_opt():
    return parse_protocol("exp_opt")


@pytest.fixture
def whp_opt():
    return parse_protocol("whp_opt")


@pytest.fixture
def global_elias():
    return parse_protocol("global_elias")


@pytest.fixture
def engine():
    return ContentionEngine()


@pytest.fixture
def clean_env(monkeypatch, tmp_path):
    """Run with no CONTENTION_LAB_ variables and no stray .env file."""
    for name in ("HORIZON_CAP", "COIN_BLOCK", "LOG_LEVEL"):
        # set then delete so values loaded from a .env file are undone afterwards
        monkeypatch.setenv(f"CONTENTION_LAB_{name}", "")
        monkeypatch.delenv(f"CONTENTION_LAB_{name}")
    monkeypatch.chdir(tmp_path)
    return tmp_path
