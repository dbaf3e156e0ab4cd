"""Experiment configuration files: parsing, validation and schedule construction.

Configs are JSON objects with an integer ``version`` and are validated by
pydantic models that reject unknown keys. Numeric fields that depend on n may
be written as expressions such as ``"4 * n * zeta(2 * lam(n) + 1)"``; they are
parsed with ``ast`` and evaluated over a small whitelist of names.
"""
import ast
import json
import logging
import math
import operator
import re
from typing import Annotated, Literal, Union

from pydantic import (
    AfterValidator,
    BaseModel,
    ConfigDict,
    Field,
    StrictFloat,
    StrictInt,
    StrictStr,
    ValidationError,
    field_validator,
    model_validator,
)

from analysis import DensityProfile, FilterSpec, block_exponent
from counter_game import CounterGameConfig, fixed_option_strategy, greedy_drain_strategy
from elias import log_star, zeta
from engine import DRIVERS, derive_seed
from errors import ConfigError, ContentionLabError
from protocols import parse_protocol
from schedule import (
    batch_per_slot,
    high_slot_blocker,
    layered_adversary,
    restricted_window_adversary,
    simple_adversary,
    synchronous,
    uniform_random,
)

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1
MAX_EXPONENT = 64
MAX_POWER_BITS = 4096

_FUNCTIONS = {
    "log2": math.log2,
    "ln": math.log,
    "sqrt": math.sqrt,
    "ceil": math.ceil,
    "floor": math.floor,
    "min": min,
    "max": max,
    "zeta": zeta,
    "log_star": log_star,
    "lam": lambda n, c=1.0: block_exponent(n, c),
}


def _power(base, exponent):
    if abs(exponent) > MAX_EXPONENT:
        raise ConfigError(f"exponent {exponent} exceeds {MAX_EXPONENT}")
    if base and abs(exponent) * math.log2(abs(base)) > MAX_POWER_BITS:
        raise ConfigError(f"{base} ** {exponent} exceeds {MAX_POWER_BITS} bits")
    result = operator.pow(base, exponent)
    if isinstance(result, complex):
        raise ConfigError(f"{base} ** {exponent} is not a real number")
    return result


_BINARY = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.FloorDiv: operator.floordiv,
    ast.Pow: _power,
    ast.Mod: operator.mod,
}


def _eval_node(node, n):
    if isinstance(node, ast.Expression):
        return _eval_node(node.body, n)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return node.value
    if isinstance(node, ast.Name) and node.id == "n":
        if n is None:
            raise ConfigError("'n' is not defined in this expression context")
        return n
    if isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
        return _BINARY[type(node.op)](_eval_node(node.left, n), _eval_node(node.right, n))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        value = _eval_node(node.operand, n)
        return -value if isinstance(node.op, ast.USub) else value
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
            and node.func.id in _FUNCTIONS and not node.keywords):
        return _FUNCTIONS[node.func.id](*(_eval_node(arg, n) for arg in node.args))
    raise ConfigError(f"unsupported expression element: {ast.dump(node)}")


def _parse(expr):
    try:
        return ast.parse(expr, mode="eval")
    except SyntaxError as e:
        raise ConfigError(f"cannot parse expression {expr!r}: {e.msg}") from None


def evaluate(expr, n=None):
    """Evaluate a number or an arithmetic expression of n."""
    if isinstance(expr, bool):
        raise ConfigError(f"expected a number or expression, got {expr!r}")
    if isinstance(expr, (int, float)):
        return expr
    if not isinstance(expr, str):
        raise ConfigError(f"expected a number or expression, got {expr!r}")
    tree = _parse(expr)
    try:
        return _eval_node(tree, n)
    except (ArithmeticError, ValueError, TypeError, ContentionLabError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"cannot evaluate {expr!r} at n={n}: {e}") from None


def evaluate_int(expr, n=None, minimum=None, name="value"):
    """Evaluate and round up to an integer."""
    value = evaluate(expr, n)
    result = int(value) if float(value).is_integer() else math.ceil(value)
    if minimum is not None and result < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {result} (from {expr!r})")
    return result


def _check_names(expr):
    """Reject expressions that use anything outside the whitelist, without evaluating them."""
    if isinstance(expr, str):
        for node in ast.walk(_config_error_as_value_error(_parse, expr)):
            if isinstance(node, ast.Name) and node.id != "n" and node.id not in _FUNCTIONS:
                raise ValueError(f"unknown name {node.id!r} in {expr!r}")
            if isinstance(node, (ast.Attribute, ast.Subscript, ast.Lambda, ast.IfExp, ast.Compare,
                                 ast.List, ast.Tuple, ast.Dict, ast.Set)):
                raise ValueError(f"unsupported expression element in {expr!r}")
    return expr


Expression = Annotated[Union[StrictInt, StrictFloat, StrictStr], AfterValidator(_check_names)]


def _describe(error, where):
    parts = []
    for item in error.errors():
        loc = ".".join(str(p) for p in item["loc"]) or where
        parts.append(f"{loc}: {item['msg']}")
    return f"invalid {where}: " + "; ".join(parts)


def _validate(model, data, where):
    """model_validate with pydantic and library errors reported as ConfigError."""
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_describe(e, where)) from None


def _config_error_as_value_error(call, *args):
    try:
        return call(*args)
    except ConfigError as e:
        raise ValueError(str(e)) from None


def load_json(path):
    try:
        with open(path) as handle:
            return json.load(handle)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    def to_dict(self):
        return self.model_dump()


# schedules


class SynchronousSpec(_Model):
    kind: Literal["synchronous"]


class BatchPerSlotSpec(_Model):
    kind: Literal["batch_per_slot"]
    rate: Expression
    duration: Expression


class UniformRandomSpec(_Model):
    kind: Literal["uniform_random"]
    count: Expression
    range_end: Expression


class SimpleAdversarySpec(_Model):
    kind: Literal["simple_adversary"]


class LayeredAdversarySpec(_Model):
    kind: Literal["layered_adversary"]
    beta: Expression
    gamma: Expression
    max_resamples: Expression = 100


class RestrictedWindowSpec(_Model):
    kind: Literal["restricted_window_adversary"]


class HighSlotBlockerSpec(_Model):
    kind: Literal["high_slot_blocker"]
    first: Expression
    last: Expression
    beta: Expression


ScheduleSpec = Annotated[
    Union[SynchronousSpec, BatchPerSlotSpec, UniformRandomSpec, SimpleAdversarySpec,
          LayeredAdversarySpec, RestrictedWindowSpec, HighSlotBlockerSpec],
    Field(discriminator="kind"),
]


class _ScheduleHolder(_Model):
    schedule: ScheduleSpec


def parse_schedule(spec):
    if isinstance(spec, BaseModel):
        return spec
    return _validate(_ScheduleHolder, {"schedule": spec}, "schedule").schedule


def build_schedule(spec, n, protocol, seed):
    """Materialize a schedule spec for n parties; random kinds draw from a seed derived from ``seed``."""
    spec = parse_schedule(spec)
    schedule_seed = derive_seed(seed, 1, 0)
    if spec.kind == "synchronous":
        return synchronous(n)
    if spec.kind == "batch_per_slot":
        return batch_per_slot(evaluate_int(spec.rate, n, 1, "rate"),
                              evaluate_int(spec.duration, n, 1, "duration"))
    if spec.kind == "uniform_random":
        return uniform_random(evaluate_int(spec.count, n, 0, "count"),
                              evaluate_int(spec.range_end, n, 1, "range_end"), schedule_seed)
    if spec.kind == "simple_adversary":
        return simple_adversary(n, protocol.eta)
    if spec.kind == "layered_adversary":
        report = layered_adversary(n, protocol, evaluate(spec.beta, n), evaluate(spec.gamma, n),
                                   schedule_seed, evaluate_int(spec.max_resamples, n, 0))
        if not report.verified:
            raise ConfigError(f"layered adversary could not be verified at n={n}")
        return report.schedule
    if spec.kind == "restricted_window_adversary":
        return restricted_window_adversary(n, protocol, schedule_seed)
    window = (evaluate_int(spec.first, n, 1, "first"), evaluate_int(spec.last, n, 1, "last"))
    return high_slot_blocker(protocol, window, n, evaluate(spec.beta, n))


def _protocol_name(name):
    parse_protocol(name)
    return name


ProtocolName = Annotated[StrictStr, AfterValidator(_protocol_name)]


# experiments


class Outputs(_Model):
    stats: StrictStr = "stats.json"
    traces: StrictStr | None = None
    schedule: StrictStr | None = None


class ExperimentConfig(_Model):
    version: Literal[CONFIG_VERSION]
    protocol: ProtocolName
    schedule: ScheduleSpec
    n: StrictInt = Field(ge=1)
    horizon: Expression
    trials: StrictInt = Field(default=1, ge=1)
    seed: StrictInt = Field(default=0, ge=0)
    q: float = Field(default=0.5, gt=0.0, lt=1.0)
    outputs: Outputs = Field(default_factory=Outputs)
    driver: StrictStr = "auto"

    @field_validator("driver")
    @classmethod
    def known_driver(cls, value):
        if value not in DRIVERS:
            raise ValueError(f"driver must be one of {', '.join(DRIVERS)}, got {value!r}")
        return value

    @model_validator(mode="after")
    def horizon_is_positive(self):
        _config_error_as_value_error(self.horizon_for, self.n)
        return self

    def horizon_for(self, n):
        return evaluate_int(self.horizon, n, 1, "horizon")

    def build_protocol(self):
        return parse_protocol(self.protocol)

    def with_overrides(self, **changes):
        return ExperimentConfig.from_dict({**self.to_dict(), **changes})

    @classmethod
    def from_dict(cls, data, where="experiment config"):
        return _validate(cls, data, where)


class SweepConfig(_Model):
    version: Literal[CONFIG_VERSION]
    base: ExperimentConfig
    n_values: tuple[Annotated[StrictInt, Field(ge=1)], ...] = Field(min_length=1)
    output: StrictStr = "sweep.csv"

    @field_validator("n_values")
    @classmethod
    def strictly_ascending(cls, values):
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("n_values must be strictly ascending")
        return values

    @model_validator(mode="after")
    def horizons_are_positive(self):
        for n in self.n_values:
            _config_error_as_value_error(self.base.horizon_for, n)
        return self

    @classmethod
    def from_dict(cls, data):
        return _validate(cls, data, "sweep config")


# analysis


class AllFilter(_Model):
    kind: Literal["all"]

    def build(self):
        return FilterSpec.all()


class LowBetaFilter(_Model):
    kind: Literal["low_beta"]
    beta: float = Field(ge=math.e)

    def build(self):
        return FilterSpec.low_beta(float(self.beta))


class LowBetaFromFilter(_Model):
    kind: Literal["low_beta_from"]
    beta: float = Field(ge=math.e)
    m: StrictInt = Field(ge=1)

    def build(self):
        return FilterSpec.low_beta_from(float(self.beta), self.m)


FilterConfig = Annotated[Union[AllFilter, LowBetaFilter, LowBetaFromFilter], Field(discriminator="kind")]


class _FilterHolder(_Model):
    filter: FilterConfig


def build_filter(spec):
    if not isinstance(spec, BaseModel):
        spec = _validate(_FilterHolder, {"filter": spec}, "filter").filter
    return spec.build()


class ProfileConfig(_Model):
    t0: StrictInt = Field(ge=1)
    mu: float = Field(ge=0.0, le=1.0)
    delta: StrictInt = Field(ge=1)


class BlocksConfig(_Model):
    n: StrictInt = Field(ge=16)
    c: float = Field(default=1.0, ge=1.0)
    window: tuple[StrictInt, StrictInt]

    @field_validator("window")
    @classmethod
    def ordered_window(cls, window):
        first, last = window
        if first < 1 or last < first:
            raise ValueError(f"window must satisfy 1 <= first <= last, got {list(window)}")
        return window


class AnalyzeConfig(_Model):
    version: Literal[CONFIG_VERSION]
    trace: StrictStr
    protocol: ProtocolName
    filter: FilterConfig = Field(default_factory=lambda: AllFilter(kind="all"))
    survivors_as_of: StrictInt | None = Field(default=None, ge=1)
    profile: ProfileConfig | None = None
    blocks: BlocksConfig | None = None

    @model_validator(mode="after")
    def filter_fits_protocol(self):
        if self.filter.kind != "all" and self.build_protocol().is_global_clock:
            raise ValueError(f"filter {self.filter.kind} needs a LocalClock protocol, got {self.protocol}")
        return self

    def build_protocol(self):
        return parse_protocol(self.protocol)

    def build_filter(self):
        return self.filter.build()

    def build_profile(self):
        return DensityProfile(self.profile.t0, float(self.profile.mu), self.profile.delta)

    @classmethod
    def from_dict(cls, data):
        return _validate(cls, data, "analyze config")


# counter games


_FIXED = re.compile(r"^fixed_(\d+)$")


def build_strategy(name, config):
    if name == "greedy_drain":
        return greedy_drain_strategy(config)
    match = _FIXED.match(name)
    if match:
        return fixed_option_strategy(int(match.group(1)))
    raise ConfigError(f"unknown counter-game strategy {name!r}")


class CounterGameEntry(_Model):
    id: StrictStr
    r: StrictInt = Field(ge=1)
    c: float = Field(ge=0.0)
    counters: tuple[Annotated[StrictInt, Field(ge=0)], ...]
    gammas: tuple[float, ...]
    strategy: StrictStr = "greedy_drain"

    @field_validator("strategy")
    @classmethod
    def known_strategy(cls, name):
        if name != "greedy_drain" and not _FIXED.match(name):
            raise ValueError(f"unknown counter-game strategy {name!r}")
        return name

    @model_validator(mode="after")
    def valid_game(self):
        CounterGameConfig(self.r, float(self.c), self.counters, self.gammas)
        return self

    @property
    def game(self):
        return CounterGameConfig(self.r, float(self.c), self.counters, self.gammas)


class CounterGameSuite(_Model):
    version: Literal[CONFIG_VERSION]
    configs: tuple[CounterGameEntry, ...] = Field(min_length=1)
    trials: StrictInt = Field(default=10000, ge=1)
    seed: StrictInt = Field(default=0, ge=0)
    output: StrictStr = "counter_game.csv"

    @model_validator(mode="before")
    @classmethod
    def default_ids(cls, data):
        if isinstance(data, dict) and isinstance(data.get("configs"), (list, tuple)):
            configs = [
                {**item, "id": str(item.get("id", i))} if isinstance(item, dict) else item
                for i, item in enumerate(data["configs"])
            ]
            data = {**data, "configs": configs}
        return data

    @model_validator(mode="after")
    def unique_ids(self):
        ids = [entry.id for entry in self.configs]
        if len(set(ids)) != len(ids):
            raise ValueError("counter-game config ids must be unique")
        return self

    @property
    def entries(self):
        return self.configs

    @classmethod
    def from_dict(cls, data):
        return _validate(cls, data, "counter-game config")
