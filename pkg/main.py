"""Command-line entry point for the contention-resolution laboratory."""
import argparse
import logging
import sys

from analysis import (
    classify_blocks,
    counter_game_bound,
    counter_game_trials,
    density_goodness,
    dynamic_contention,
    latency_scale,
    latency_stats,
)
from elias import a_of, a_prime_of, code_len, encode
from engine import ContentionEngine, derive_seed, run_trials
from errors import ConfigError, ContentionLabError, InvalidParameterError, TraceFormatError
from experiment_config import (
    AnalyzeConfig,
    CounterGameSuite,
    ExperimentConfig,
    SweepConfig,
    build_schedule,
    build_strategy,
    load_json,
)
from result_store import ResultStore, import_trace
from schedule import ObliviousSchedule
from settings import configure_logging, load_settings

logger = logging.getLogger("contention_lab")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

_LOAD_ERRORS = (ConfigError, InvalidParameterError, TraceFormatError)

SWEEP_HEADER = ["n", "mean_max_latency", "q_quantile", "censored_fraction", "ratio", "bound_scale"]
COUNTER_GAME_HEADER = ["config_id", "win_rate", "stderr", "bound", "vacuous", "consistent"]


class LoadError(Exception):
    """Wraps an input problem so it maps to the config exit code."""


class LabCommands:
    def __init__(self, args, settings):
        self.args = args
        self.settings = settings
        self.store = None

    def open_store(self):
        self.store = ResultStore(self.args.out)
        return self.store

    def engine(self, driver="auto"):
        return ContentionEngine.from_settings(self.settings, driver)

    def require_config(self):
        if not self.args.config:
            raise ConfigError(f"`{self.args.command}` needs --config PATH")
        return load_json(self.args.config)

    def seed_override(self, data):
        if self.args.seed is not None:
            data = {**data, "seed": self.args.seed}
        return data

    # sim

    def load_sim(self):
        config = ExperimentConfig.from_dict(self.seed_override(self.require_config()))
        protocol = config.build_protocol()
        schedule = build_schedule(config.schedule, config.n, protocol, config.seed)
        return config, protocol, schedule

    def handle_sim(self, loaded):
        config, protocol, schedule = loaded
        horizon = config.horizon_for(config.n)
        traces = run_trials(protocol, schedule, horizon, config.seed, config.trials,
                            self.args.threads, self.engine(config.driver))
        stats = latency_stats(traces, config.q)
        store = self.open_store()
        outputs = config.outputs
        if outputs.traces:
            for trial, trace in enumerate(traces):
                store.export_trace(trace, f"{outputs.traces}_{trial:04d}")
        if outputs.schedule:
            store.export_schedule(schedule, outputs.schedule)
        path = store.export_stats(stats, outputs.stats, extra={
            "protocol": protocol.name,
            "n": config.n,
            "parties_per_trial": schedule.total_parties,
            "horizon": horizon,
            "trials": config.trials,
            "seed": config.seed,
        })
        print(f"{protocol.name}: mean latency {stats.mean:.6g}, max {stats.max}, "
              f"censored {stats.censored_fraction:.4%} -> {path}")

    # sweep

    def load_sweep(self):
        data = self.require_config()
        if self.args.seed is not None and isinstance(data.get("base"), dict):
            data = {**data, "base": {**data["base"], "seed": self.args.seed}}
        return SweepConfig.from_dict(data)

    def handle_sweep(self, sweep):
        base = sweep.base
        protocol = base.build_protocol()
        engine = self.engine(base.driver)
        rows = []
        for n in sweep.n_values:
            schedule = build_schedule(base.schedule, n, protocol, derive_seed(base.seed, n))
            horizon = base.horizon_for(n)
            traces = run_trials(protocol, schedule, horizon, derive_seed(base.seed, n), base.trials,
                                self.args.threads, engine)
            stats = latency_stats(traces, base.q)
            scale = latency_scale(protocol, n)
            rows.append((n, stats.mean_max, stats.q_threshold, stats.censored_fraction, stats.mean_max / n, scale))
            logger.info("sweep row n=%d: mean max latency %.6g", n, stats.mean_max)
        path = self.open_store().export_rows(sweep.output, SWEEP_HEADER, rows)
        print(f"sweep over {len(rows)} values of n -> {path}")

    # counter-game

    def load_counter_game(self):
        return CounterGameSuite.from_dict(self.seed_override(self.require_config()))

    def handle_counter_game(self, suite):
        rows = []
        for index, entry in enumerate(suite.entries):
            strategy = build_strategy(entry.strategy, entry.game)
            summary = counter_game_trials(entry.game, strategy, suite.trials, derive_seed(suite.seed, index))
            bound = counter_game_bound(entry.game)
            consistent = None
            if not bound.vacuous:
                consistent = summary.win_rate <= bound.value + 3.0 * summary.stderr
            rows.append((entry.id, summary.win_rate, summary.stderr, bound.value, bound.vacuous, consistent))
        path = self.open_store().export_rows(suite.output, COUNTER_GAME_HEADER, rows)
        print(f"{len(rows)} counter-game configs -> {path}")

    # elias

    def load_elias(self):
        if self.args.max_n < 1:
            raise InvalidParameterError(f"--max-n must be >= 1, got {self.args.max_n}")
        max_t = self.args.max_t if self.args.max_t is not None else self.args.max_n
        if max_t < 1:
            raise InvalidParameterError(f"--max-t must be >= 1, got {max_t}")
        return self.args.max_n, max_t

    def handle_elias(self, limits):
        max_n, max_t = limits
        store = self.open_store()
        codes = store.export_rows("elias_codes.csv", ["N", "code", "code_len"],
                                  ((N, encode(N), code_len(N)) for N in range(1, max_n + 1)))
        sequence = store.export_rows("elias_sequence.csv", ["t", "a", "a_prime"],
                                     ((t, a_of(t), a_prime_of(t)) for t in range(1, max_t + 1)))
        print(f"wrote {codes} and {sequence}")

    # analyze

    def load_analyze(self):
        config = AnalyzeConfig.from_dict(self.require_config())
        trace = import_trace(config.trace)
        if config.survivors_as_of is not None and not 1 <= config.survivors_as_of <= trace.horizon:
            raise ConfigError(f"survivors_as_of must lie in [1, {trace.horizon}]")
        return config, trace, config.build_protocol(), config.build_filter()

    def handle_analyze(self, loaded):
        config, trace, protocol, filter_spec = loaded
        store = self.open_store()
        series = dynamic_contention(trace, protocol, filter_spec, config.survivors_as_of)
        written = [store.export_series(series, "contention.csv")]
        if config.blocks is not None:
            schedule = ObliviousSchedule.from_wake_slots(trace.wake_slots)
            report = classify_blocks(schedule, config.blocks.n, config.blocks.c, config.blocks.window)
            written.append(store.export_blocks(report, "blocks.csv"))
        if config.profile is not None:
            profile = config.build_profile()
            flags = density_goodness(trace, profile)
            written.append(store.export_goodness(trace, profile, flags, "goodness.csv"))
        print("wrote " + ", ".join(written))

    def run(self):
        name = self.args.command.replace("-", "_")
        try:
            loaded = getattr(self, f"load_{name}")()
        except _LOAD_ERRORS as e:
            raise LoadError(str(e)) from e
        getattr(self, f"handle_{name}")(loaded)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", metavar="DIR", default="results", help="output directory (default: results)")
    common.add_argument("--threads", type=int, default=1, help="worker processes for trial farms")
    common.add_argument("--log-level", help="logging level (default: CONTENTION_LAB_LOG_LEVEL or WARNING)")

    parser = argparse.ArgumentParser(prog="contention-lab",
                                     description="Slot-accurate contention-resolution simulations.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sim", parents=[common], help="seeded trials of one experiment")
    sub.add_parser("sweep", parents=[common], help="latency scaling over a list of n")
    sub.add_parser("counter-game", parents=[common], help="counter-game win rates against the bound")
    elias = sub.add_parser("elias", parents=[common], help="dump Elias codes and a(t) tables")
    elias.add_argument("--max-n", type=int, default=64)
    elias.add_argument("--max-t", type=int)
    sub.add_parser("analyze", parents=[common], help="contention, blocks and goodness of a saved trace")
    return parser


def _fail(code, message):
    logger.error("%s", message)
    print(f"error: {message}", file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings()
        configure_logging((args.log_level or settings.log_level).upper())
    except (ConfigError, ValueError) as e:
        return _fail(EXIT_CONFIG, str(e))
    try:
        LabCommands(args, settings).run()
    except LoadError as e:
        return _fail(EXIT_CONFIG, str(e))
    except ConfigError as e:
        return _fail(EXIT_CONFIG, str(e))
    except (ContentionLabError, OSError) as e:
        return _fail(EXIT_RUNTIME, str(e))
    except Exception as e:
        logger.exception("unexpected failure")
        return _fail(EXIT_RUNTIME, f"{type(e).__name__}: {e}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
