"""CSV and JSON import/export for traces, schedules, series, blocks and statistics."""
import csv
import json
import logging
import os

import numpy as np

from engine import NO_PARTY, ExecutionTrace
from errors import TraceFormatError
from schedule import ObliviousSchedule

logger = logging.getLogger(__name__)

SLOT_HEADER = ["slot", "wakeups", "transmitters", "success_party"]
PARTY_HEADER = ["id", "wake_slot", "success_slot"]
SCHEDULE_HEADER = ["slot", "wake_count"]
SERIES_HEADER = ["slot", "sigma_hat", "sigma"]
BLOCK_HEADER = ["block_index", "start", "class", "tau"]
GOODNESS_HEADER = ["interval", "start", "end", "mu", "successes", "good"]


def format_value(value):
    """Locale-free cell text; floats keep 17 significant digits."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _read_rows(path, header):
    try:
        with open(path, newline="") as handle:
            reader = csv.reader(handle)
            found = next(reader, None)
            if found != header:
                raise TraceFormatError(f"{path}: expected header {','.join(header)}, got {found}")
            rows = []
            for row_num, row in enumerate(reader, 2):
                if len(row) != len(header):
                    raise TraceFormatError(f"{path}: row {row_num} has {len(row)} columns, expected {len(header)}")
                rows.append(row)
            return rows
    except OSError as e:
        raise TraceFormatError(f"cannot read {path}: {e}") from e


def _int(cell, path, row_num, optional=False):
    if optional and cell == "":
        return None
    try:
        return int(cell)
    except ValueError:
        raise TraceFormatError(f"{path}: row {row_num} has a non-integer cell {cell!r}") from None


class ResultStore:
    """Writes experiment artifacts under one output directory."""

    def __init__(self, out_dir="results"):
        self.out_dir = out_dir
        self.ensure_out_dir()

    def ensure_out_dir(self):
        os.makedirs(self.out_dir, exist_ok=True)

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def export_rows(self, name, header, rows):
        path = self.path(name)
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_value(v) for v in row])
        logger.debug("wrote %s", path)
        return path

    def export_json(self, name, data):
        path = self.path(name)
        with open(path, "w") as handle:
            json.dump(data, handle, indent=2, sort_keys=True, allow_nan=False)
            handle.write("\n")
        logger.debug("wrote %s", path)
        return path

    def export_trace(self, trace, prefix):
        """``{prefix}_slots.csv``, ``{prefix}_parties.csv`` and ``{prefix}_meta.json``."""
        slot_rows = (
            (t, int(w), int(x), int(s) if s != NO_PARTY else None)
            for t, (w, x, s) in enumerate(zip(trace.wakeups, trace.transmitters, trace.success_party))
        )
        self.export_rows(f"{prefix}_slots.csv", SLOT_HEADER, slot_rows)
        party_rows = (
            (u, int(w), int(s) if s >= 0 else None)
            for u, (w, s) in enumerate(zip(trace.wake_slots, trace.success_slots))
        )
        self.export_rows(f"{prefix}_parties.csv", PARTY_HEADER, party_rows)
        return self.export_json(f"{prefix}_meta.json", {
            "protocol": trace.protocol,
            "horizon": trace.horizon,
            "seed": trace.seed,
            "prng": trace.prng,
            "driver": trace.driver,
        })

    def export_schedule(self, schedule, name):
        return self.export_rows(name, SCHEDULE_HEADER, sorted(schedule.wake_counts.items()))

    def export_series(self, series, name):
        dynamic = series.dynamic_vals
        rows = (
            (t, series.static_vals[t - 1], None if dynamic is None else dynamic[t - 1])
            for t in range(1, series.t_max + 1)
        )
        return self.export_rows(name, SERIES_HEADER, rows)

    def export_blocks(self, report, name):
        return self.export_rows(name, BLOCK_HEADER, report.rows())

    def export_goodness(self, trace, profile, flags, name):
        done = trace.success_slots[trace.success_slots >= 0]
        rows = []
        for index, ((mu, start, end), good) in enumerate(zip(profile.intervals(trace.horizon), flags)):
            successes = int(np.count_nonzero((done >= start) & (done < end)))
            rows.append((index, start, end, float(mu), successes, good))
        return self.export_rows(name, GOODNESS_HEADER, rows)

    def export_stats(self, stats, name, extra=None):
        data = stats.to_dict()
        if extra:
            data.update(extra)
        return self.export_json(name, data)


def import_schedule(path):
    counts = {}
    for row_num, (slot, count) in enumerate(_read_rows(path, SCHEDULE_HEADER), 2):
        slot, count = _int(slot, path, row_num), _int(count, path, row_num)
        if slot < 0 or count < 0:
            raise TraceFormatError(f"{path}: row {row_num} has a negative slot or count")
        counts[slot] = counts.get(slot, 0) + count
    return ObliviousSchedule(counts)


def import_trace(prefix):
    """Read back a trace written by ``ResultStore.export_trace``."""
    meta_path = f"{prefix}_meta.json"
    try:
        with open(meta_path) as handle:
            meta = json.load(handle)
    except (OSError, json.JSONDecodeError) as e:
        raise TraceFormatError(f"cannot read {meta_path}: {e}") from e
    missing = {"protocol", "horizon", "seed"} - set(meta)
    if missing:
        raise TraceFormatError(f"{meta_path} lacks {', '.join(sorted(missing))}")

    slots_path = f"{prefix}_slots.csv"
    events = []
    for row_num, row in enumerate(_read_rows(slots_path, SLOT_HEADER), 2):
        slot = _int(row[0], slots_path, row_num)
        wakeups = _int(row[1], slots_path, row_num)
        transmitters = _int(row[2], slots_path, row_num)
        winner = _int(row[3], slots_path, row_num, optional=True)
        if (winner is not None) != (transmitters == 1):
            raise TraceFormatError(f"{slots_path}: row {row_num} breaks the exactly-one success rule")
        if wakeups or transmitters:
            events.append((slot, wakeups, transmitters, NO_PARTY if winner is None else winner))

    parties_path = f"{prefix}_parties.csv"
    wake, done = [], []
    for row_num, row in enumerate(_read_rows(parties_path, PARTY_HEADER), 2):
        if _int(row[0], parties_path, row_num) != len(wake):
            raise TraceFormatError(f"{parties_path}: party ids must run 0, 1, 2, ...")
        wake.append(_int(row[1], parties_path, row_num))
        success = _int(row[2], parties_path, row_num, optional=True)
        done.append(NO_PARTY if success is None else success)

    table = np.array(events, dtype=np.int64).reshape(-1, 4)
    return ExecutionTrace(
        protocol=meta["protocol"],
        horizon=int(meta["horizon"]),
        seed=int(meta["seed"]),
        wake_slots=np.array(wake, dtype=np.int64),
        success_slots=np.array(done, dtype=np.int64),
        event_slots=table[:, 0].copy(),
        event_wakeups=table[:, 1].copy(),
        event_transmitters=table[:, 2].copy(),
        event_success_party=table[:, 3].copy(),
        driver=meta.get("driver", "skip"),
        prng=meta.get("prng", "PCG64/SeedSequence"),
    )
