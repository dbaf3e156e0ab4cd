"""Counter games: the budgeted adversary game that bounds a party's failure probability.

Options are numbered 1..k. Options 1..k-1 decrement their counter with
probability gamma_i and end the game once the counter drops below zero;
option k ends the game with probability c/r. The adversary wins when all r
rounds are survived.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from errors import InvalidParameterError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CounterGameConfig:
    r: int
    c: float
    counters: tuple = ()
    gammas: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "counters", tuple(int(v) for v in self.counters))
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        if self.r < 1:
            raise InvalidParameterError(f"r must be >= 1, got {self.r}")
        if not 0 <= self.c <= self.r:
            raise InvalidParameterError(f"c must lie in [0, r], got {self.c}")
        if len(self.counters) != len(self.gammas):
            raise InvalidParameterError("counters and gammas must have equal length")
        if any(v < 0 for v in self.counters):
            raise InvalidParameterError("counters must be non-negative")
        floor = self.c / self.r
        for g in self.gammas:
            if not floor <= g <= 1.0 or g <= 0.0:
                raise InvalidParameterError(f"every gamma must lie in [c/r, 1] = [{floor}, 1], got {g}")

    @property
    def k(self):
        return len(self.counters) + 1

    @property
    def end_prob(self):
        return self.c / self.r

    def to_dict(self):
        return {"r": self.r, "c": self.c, "counters": list(self.counters), "gammas": list(self.gammas)}

    @classmethod
    def from_dict(cls, data):
        return cls(int(data["r"]), float(data["c"]), tuple(data["counters"]), tuple(data["gammas"]))


class Strategy:
    """Maps counter states to options; ``choose_many`` handles a batch of states."""

    name = "custom"

    def __init__(self, choose=None):
        self._choose = choose

    def choose(self, state):
        return int(self._choose(tuple(int(v) for v in state)))

    def choose_many(self, states):
        return np.fromiter((self.choose(row) for row in states), dtype=np.int64, count=len(states))


class GreedyDrain(Strategy):
    """Lowest-index option with a positive counter, else option k."""

    name = "greedy_drain"

    def __init__(self, k):
        super().__init__()
        self.k = k

    def choose(self, state):
        for i, value in enumerate(state, start=1):
            if value > 0:
                return i
        return self.k

    def choose_many(self, states):
        states = np.asarray(states)
        if states.shape[1] == 0:
            return np.full(states.shape[0], self.k, dtype=np.int64)
        positive = states > 0
        return np.where(positive.any(axis=1), positive.argmax(axis=1) + 1, self.k)


class FixedOption(Strategy):
    name = "fixed"

    def __init__(self, option):
        super().__init__()
        self.option = int(option)

    def choose(self, state):
        return self.option

    def choose_many(self, states):
        return np.full(len(states), self.option, dtype=np.int64)


def greedy_drain_strategy(config):
    return GreedyDrain(config.k)


def fixed_option_strategy(option):
    return FixedOption(option)


def _as_strategy(strategy):
    return strategy if isinstance(strategy, Strategy) else Strategy(strategy)


def _check_options(options, k):
    bad = (options < 1) | (options > k)
    if bad.any():
        raise InvalidParameterError(f"strategy played option {int(options[bad][0])}, valid options are 1..{k}")


def counter_game_run(config, strategy, rng_seed):
    """Rounds survived in one game, capped at r."""
    strategy = _as_strategy(strategy)
    rng = np.random.default_rng(rng_seed)
    state = list(config.counters)
    for played in range(config.r):
        option = strategy.choose(state)
        _check_options(np.array([option]), config.k)
        draw = rng.random()
        if option == config.k:
            if draw < config.end_prob:
                return played
            continue
        if draw < config.gammas[option - 1]:
            state[option - 1] -= 1
            if state[option - 1] < 0:
                return played
    return config.r


@dataclass(frozen=True)
class CounterGameSummary:
    wins: int
    trials: int
    mean_survived: float

    @property
    def win_rate(self):
        return self.wins / self.trials

    @property
    def stderr(self):
        p = self.win_rate
        return math.sqrt(p * (1.0 - p) / self.trials)


def counter_game_trials(config, strategy, trials, rng_seed):
    """Play ``trials`` independent games side by side."""
    if trials < 1:
        raise InvalidParameterError(f"trials must be >= 1, got {trials}")
    strategy = _as_strategy(strategy)
    rng = np.random.default_rng(rng_seed)
    counters = np.tile(np.asarray(config.counters, dtype=np.int64), (trials, 1))
    gammas = np.asarray(config.gammas, dtype=np.float64)
    survived = np.zeros(trials, dtype=np.int64)
    alive = np.arange(trials)
    for _ in range(config.r):
        if not alive.size:
            break
        options = np.asarray(strategy.choose_many(counters[alive]), dtype=np.int64)
        _check_options(options, config.k)
        draws = rng.random(alive.size)
        ended = np.zeros(alive.size, dtype=bool)
        final = options == config.k
        ended[final] = draws[final] < config.end_prob
        if not final.all():
            rows = alive[~final]
            cols = options[~final] - 1
            hit = draws[~final] < gammas[cols]
            counters[rows[hit], cols[hit]] -= 1
            broke = np.zeros(rows.size, dtype=bool)
            broke[hit] = counters[rows[hit], cols[hit]] < 0
            ended[~final] = broke
        alive = alive[~ended]
        survived[alive] += 1
    wins = int(np.count_nonzero(survived >= config.r))
    logger.debug("counter game r=%d c=%g: %d/%d wins with %s", config.r, config.c, wins, trials, strategy.name)
    return CounterGameSummary(wins, trials, float(survived.mean()))


@dataclass(frozen=True)
class CounterGameBound:
    alpha: float
    beta: float
    value: float

    @property
    def vacuous(self):
        return self.value >= 1.0


def counter_game_bound(config):
    """alpha + exp(-c (1 - 2 beta / r)), unclamped."""
    alpha = math.fsum(math.exp(-v / 6.0) for v in config.counters)
    beta = math.fsum(v / g for v, g in zip(config.counters, config.gammas))
    value = alpha + math.exp(-config.c * (1.0 - 2.0 * beta / config.r))
    bound = CounterGameBound(alpha, beta, value)
    if bound.vacuous:
        logger.warning("counter game bound is vacuous (%.5g) for r=%d, c=%g", value, config.r, config.c)
    return bound


def _loglog(n):
    if n < 5:
        raise InvalidParameterError(f"n must be >= 5 for log2 log2 n > 1, got {n}")
    return math.log2(math.log2(n))


def upper_ind_range_config(n, r, U, c):
    """The three-option game a party's window [a, a + r) reduces to.

    Option 1 counts successes of other parties under moderate contention,
    option 2 counts heavily contended slots, option 3 is a low-contention slot.
    """
    loglog = _loglog(n)
    gamma_1 = 0.25 * loglog / math.sqrt(math.log2(n))
    n_2 = math.ceil(4.0 * n * U / loglog)
    return CounterGameConfig(r, c, (n - 1, n_2), (gamma_1, 1.0))


def upper_ind_range_bound(n, r, U, c):
    """exp(-c (1 - 8n (sqrt(log2 n) + U) / (r log2 log2 n))) + n^-20."""
    loglog = _loglog(n)
    ratio = 8.0 * n * (math.sqrt(math.log2(n)) + U) / (r * loglog)
    return math.exp(-c * (1.0 - ratio)) + float(n) ** -20
