"""Transmission-probability rules for LocalClock and GlobalClock parties."""
import math
import re
import threading
from dataclasses import dataclass
from enum import Enum

import numpy as np

from elias import a_prime_of, a_prime_values
from errors import InvalidParameterError

# 2**k for k outside this range is either >= 1/2 for every realistic local
# time or below the smallest subnormal double.
_MIN_EXPONENT = -1074
_MAX_EXPONENT = 1000

_KNOWN_N_NAME = re.compile(r"^global_known_n(\d+)$")


class ProtocolKind(Enum):
    MEMORYLESS_BEB = "beb"
    EXP_OPT = "exp_opt"
    WHP_OPT = "whp_opt"
    GLOBAL_ELIAS = "global_elias"
    GLOBAL_KNOWN_N = "global_known_n"
    TABULATED = "tabulated"


GLOBAL_CLOCK_KINDS = frozenset({ProtocolKind.GLOBAL_ELIAS, ProtocolKind.GLOBAL_KNOWN_N})


@dataclass(frozen=True)
class ClockContext:
    """What a party perceives in one slot: global time t and local time t - t_u."""

    global_time: int
    local_time: int

    def __post_init__(self):
        if self.local_time < 1:
            raise InvalidParameterError(f"local_time must be >= 1, got {self.local_time}")
        if self.global_time < self.local_time:
            raise InvalidParameterError(
                f"global_time ({self.global_time}) must be >= local_time ({self.local_time})"
            )


def beb_prob(t_loc):
    """Memoryless binary exponential backoff: min(1/2, 1/t_loc)."""
    return min(0.5, 1.0 / t_loc)


def _plateau_exponent(j):
    """ceil(log2(ceil(1 + j/10))) computed on integers."""
    return ((j + 9) // 10).bit_length()


def exp_opt_prob(t_loc):
    """1 / 2^x with x = ceil(log2 ceil(1 + t_loc/10)); optimal expected latency."""
    return 2.0 ** -_plateau_exponent(t_loc)


def whp_opt_prob(t_loc):
    """x / 2^x with the same plateau exponent; optimal w.h.p. latency."""
    x = _plateau_exponent(t_loc)
    return x * 2.0 ** -x


def _scaled(exponent, t_loc):
    exponent = max(_MIN_EXPONENT, min(_MAX_EXPONENT, exponent))
    return min(0.5, math.ldexp(1.0, exponent) / t_loc)


def global_elias_prob(t, t_loc):
    """min(1/2, 2^{a'(t)} / t_loc): the Elias-code synchronized rule."""
    return _scaled(a_prime_of(t), t_loc)


def known_n_cycle(N):
    """(L, P): L = ceil(log2 log2 N), and the exponent cycles with period P = 4L + 1."""
    if N < 4:
        raise InvalidParameterError(f"known-N variant needs N >= 4, got {N}")
    L = math.ceil(math.log2(math.log2(N)))
    return L, 4 * L + 1


def known_n_exponent(t, N):
    L, period = known_n_cycle(N)
    return -2 * L + t % period


def known_n_prob(t, t_loc, N):
    """min(1/2, 2^{k(t)} / t_loc) where k(t) cycles through -2L..2L."""
    return _scaled(known_n_exponent(t, N), t_loc)


class _ExponentTable:
    """Lazily grown table of a'(t) shared by every GlobalElias evaluation."""

    _LIMIT = 1 << 25

    def __init__(self):
        self._values = np.zeros(1, dtype=np.int16)
        self._lock = threading.Lock()

    def lookup(self, t):
        top = int(t.max()) if t.size else 0
        if top >= self._LIMIT:
            return a_prime_values(t)
        values = self._values
        if top >= values.size:
            with self._lock:
                values = self._values
                if top >= values.size:
                    size = 1 << top.bit_length()
                    grown = np.zeros(size, dtype=np.int16)
                    grown[1:] = a_prime_values(np.arange(1, size, dtype=np.int64))
                    self._values = values = grown
        return values[t].astype(np.int64)


_EXPONENTS = _ExponentTable()


def _scaled_array(exponents, t_loc):
    exponents = np.clip(exponents, _MIN_EXPONENT, _MAX_EXPONENT).astype(np.int32)
    return np.minimum(0.5, np.ldexp(1.0, exponents) / t_loc)


@dataclass(frozen=True)
class Protocol:
    """A memoryless transmission rule, indexed by global and local time."""

    kind: ProtocolKind
    n_bound: int | None = None
    table: tuple = ()

    def __post_init__(self):
        if self.kind is ProtocolKind.GLOBAL_KNOWN_N:
            if self.n_bound is None:
                raise InvalidParameterError("global_known_n needs an N bound")
            known_n_cycle(self.n_bound)
        if self.kind is ProtocolKind.TABULATED:
            if not self.table:
                raise InvalidParameterError("a tabulated protocol needs at least one entry")
            if any(not 0.0 <= p <= 1.0 for p in self.table):
                raise InvalidParameterError("tabulated probabilities must lie in [0, 1]")
            if self.table[0] <= 0.0:
                raise InvalidParameterError("tabulated protocols need p(1) > 0")

    @property
    def name(self):
        if self.kind is ProtocolKind.GLOBAL_KNOWN_N:
            return f"global_known_n{self.n_bound}"
        return self.kind.value

    @property
    def is_global_clock(self):
        return self.kind in GLOBAL_CLOCK_KINDS

    @property
    def is_memoryless(self):
        return True

    @property
    def eta(self):
        """p(1) of a LocalClock rule."""
        return self.local_prob(1)

    def local_prob(self, t_loc):
        """p(t_loc) for LocalClock rules."""
        if self.is_global_clock:
            raise InvalidParameterError(f"{self.name} depends on the global clock")
        if t_loc < 1:
            raise InvalidParameterError(f"local time must be >= 1, got {t_loc}")
        if self.kind is ProtocolKind.MEMORYLESS_BEB:
            return beb_prob(t_loc)
        if self.kind is ProtocolKind.EXP_OPT:
            return exp_opt_prob(t_loc)
        if self.kind is ProtocolKind.WHP_OPT:
            return whp_opt_prob(t_loc)
        return float(self.table[min(t_loc, len(self.table)) - 1])

    def prob(self, ctx):
        """Transmission probability for one party in one slot."""
        if self.kind is ProtocolKind.GLOBAL_ELIAS:
            return global_elias_prob(ctx.global_time, ctx.local_time)
        if self.kind is ProtocolKind.GLOBAL_KNOWN_N:
            return known_n_prob(ctx.global_time, ctx.local_time, self.n_bound)
        return self.local_prob(ctx.local_time)

    def local_prob_array(self, t_loc):
        """Vectorized p(t_loc) for LocalClock rules."""
        if self.is_global_clock:
            raise InvalidParameterError(f"{self.name} depends on the global clock")
        j = np.asarray(t_loc, dtype=np.int64)
        if self.kind is ProtocolKind.MEMORYLESS_BEB:
            return np.minimum(0.5, 1.0 / j)
        if self.kind in (ProtocolKind.EXP_OPT, ProtocolKind.WHP_OPT):
            # frexp(v)[1] is v.bit_length() for 0 <= v < 2**53
            x = np.frexp(((j + 9) // 10).astype(np.float64))[1].astype(np.int32)
            scale = np.ldexp(1.0, -x)
            return scale if self.kind is ProtocolKind.EXP_OPT else x * scale
        table = np.asarray(self.table, dtype=np.float64)
        return table[np.minimum(j, table.size) - 1]

    def prob_array(self, t, t_loc):
        """Vectorized prob over matching arrays of global and local times."""
        t_loc = np.asarray(t_loc, dtype=np.int64)
        if self.kind is ProtocolKind.GLOBAL_ELIAS:
            return _scaled_array(_EXPONENTS.lookup(np.asarray(t, dtype=np.int64)), t_loc)
        if self.kind is ProtocolKind.GLOBAL_KNOWN_N:
            L, period = known_n_cycle(self.n_bound)
            exponents = -2 * L + np.asarray(t, dtype=np.int64) % period
            return _scaled_array(exponents, t_loc)
        return self.local_prob_array(t_loc)


def prob(protocol, ctx):
    """Dispatch to the protocol's rule."""
    return protocol.prob(ctx)


def tabulated(values):
    """A synthetic memoryless rule p(1..m), continued by its last entry."""
    return Protocol(ProtocolKind.TABULATED, table=tuple(float(v) for v in values))


def parse_protocol(name):
    """Build a protocol from its config name (beb, exp_opt, ..., global_known_n{N})."""
    name = name.strip()
    match = _KNOWN_N_NAME.match(name)
    if match:
        return Protocol(ProtocolKind.GLOBAL_KNOWN_N, n_bound=int(match.group(1)))
    for kind in ProtocolKind:
        if kind.value == name and kind not in (ProtocolKind.GLOBAL_KNOWN_N, ProtocolKind.TABULATED):
            return Protocol(kind)
    raise InvalidParameterError(f"unknown protocol name: {name!r}")
