import csv
import json

import numpy as np
import pytest

from analysis import DensityProfile, classify_blocks, density_goodness, latency_stats
from contention import dynamic_contention
from errors import TraceFormatError
from result_store import (
    BLOCK_HEADER,
    GOODNESS_HEADER,
    SERIES_HEADER,
    ResultStore,
    format_value,
    import_schedule,
    import_trace,
)
from schedule import ObliviousSchedule, batch_per_slot, synchronous
from conftest import make_trace


def _read(path):
    with open(path, newline="") as handle:
        return list(csv.reader(handle))


def test_format_value():
    assert format_value(None) == ""
    assert format_value(True) == "true"
    assert format_value(np.bool_(False)) == "false"
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(np.float64(0.5)) == "0.5"
    assert format_value(np.int64(7)) == "7"
    assert format_value("beb") == "beb"


def test_trace_round_trip(tmp_path, engine, beb):
    trace = engine.run(beb, batch_per_slot(3, 4), 200, 11)
    store = ResultStore(str(tmp_path / "out"))
    store.export_trace(trace, "run_0000")
    back = import_trace(str(tmp_path / "out" / "run_0000"))
    assert (back.protocol, back.horizon, back.seed, back.driver) == ("beb", 200, 11, trace.driver)
    np.testing.assert_array_equal(back.wake_slots, trace.wake_slots)
    np.testing.assert_array_equal(back.success_slots, trace.success_slots)
    np.testing.assert_array_equal(back.wakeups, trace.wakeups)
    np.testing.assert_array_equal(back.transmitters, trace.transmitters)
    np.testing.assert_array_equal(back.success_party, trace.success_party)


def test_exported_slot_file_layout(tmp_path):
    trace = make_trace([0, 0], [1, None], 3)
    store = ResultStore(str(tmp_path))
    store.export_trace(trace, "t")
    assert _read(tmp_path / "t_slots.csv") == [
        ["slot", "wakeups", "transmitters", "success_party"],
        ["0", "2", "0", ""],
        ["1", "0", "1", "0"],
        ["2", "0", "0", ""],
        ["3", "0", "0", ""],
    ]
    assert _read(tmp_path / "t_parties.csv") == [["id", "wake_slot", "success_slot"], ["0", "0", "1"], ["1", "0", ""]]
    meta = json.loads((tmp_path / "t_meta.json").read_text())
    assert meta["driver"] == "manual" and meta["horizon"] == 3


def _write(path, rows):
    with open(path, "w", newline="") as handle:
        csv.writer(handle, lineterminator="\n").writerows(rows)


def test_import_trace_rejects_broken_files(tmp_path):
    store = ResultStore(str(tmp_path))
    store.export_trace(make_trace([0], [2], 4), "t")
    prefix = str(tmp_path / "t")

    _write(tmp_path / "t_slots.csv", [["slot", "wakeups", "transmitters", "winner"]])
    with pytest.raises(TraceFormatError, match="header"):
        import_trace(prefix)

    _write(tmp_path / "t_slots.csv", [["slot", "wakeups", "transmitters", "success_party"], ["0", "1", "0"]])
    with pytest.raises(TraceFormatError, match="columns"):
        import_trace(prefix)

    _write(tmp_path / "t_slots.csv", [["slot", "wakeups", "transmitters", "success_party"], ["2", "0", "2", "0"]])
    with pytest.raises(TraceFormatError, match="exactly-one"):
        import_trace(prefix)

    _write(tmp_path / "t_slots.csv", [["slot", "wakeups", "transmitters", "success_party"], ["2", "0", "1", ""]])
    with pytest.raises(TraceFormatError, match="exactly-one"):
        import_trace(prefix)

    _write(tmp_path / "t_slots.csv", [["slot", "wakeups", "transmitters", "success_party"], ["x", "0", "0", ""]])
    with pytest.raises(TraceFormatError, match="non-integer"):
        import_trace(prefix)

    store.export_trace(make_trace([0], [2], 4), "t")
    _write(tmp_path / "t_parties.csv", [["id", "wake_slot", "success_slot"], ["1", "0", "2"]])
    with pytest.raises(TraceFormatError, match="ids"):
        import_trace(prefix)

    with pytest.raises(TraceFormatError):
        import_trace(str(tmp_path / "missing"))


def test_schedule_round_trip(tmp_path):
    schedule = ObliviousSchedule({0: 5, 3: 1, 40: 2})
    store = ResultStore(str(tmp_path))
    path = store.export_schedule(schedule, "schedule.csv")
    assert _read(path)[:2] == [["slot", "wake_count"], ["0", "5"]]
    assert import_schedule(path) == schedule

    _write(tmp_path / "bad.csv", [["slot", "wake_count"], ["-1", "2"]])
    with pytest.raises(TraceFormatError):
        import_schedule(str(tmp_path / "bad.csv"))


def test_series_blocks_and_goodness_files(tmp_path, beb):
    store = ResultStore(str(tmp_path))
    trace = make_trace([0, 0], [1, 3], 6)
    series = dynamic_contention(trace, beb)
    rows = _read(store.export_series(series, "contention.csv"))
    assert rows[0] == SERIES_HEADER
    assert len(rows) == 1 + 6
    assert rows[1] == ["1", "1", "1"]

    report = classify_blocks(synchronous(64), 64, 1.0, (1, 200))
    rows = _read(store.export_blocks(report, "blocks.csv"))
    assert rows[0] == BLOCK_HEADER
    assert len(rows) == 1 + report.starts.size
    assert rows[1][:2] == ["0", "1"]

    profile = DensityProfile(2, 0.5, 2)
    rows = _read(store.export_goodness(trace, profile, density_goodness(trace, profile), "goodness.csv"))
    assert rows[0] == GOODNESS_HEADER
    assert rows[1] == ["0", "1", "2", "0", "1", "false"]
    assert rows[2] == ["1", "2", "4", "0.5", "1", "true"]


def test_export_stats_merges_extra_fields(tmp_path):
    stats = latency_stats([make_trace([0, 0], [1, 3], 6)], 0.5)
    path = ResultStore(str(tmp_path)).export_stats(stats, "stats.json", {"protocol": "beb"})
    data = json.loads(open(path).read())
    assert data["protocol"] == "beb"
    assert data["mean"] == 2.0
    assert data["finished"] == 2


def test_export_stats_writes_null_for_an_all_censored_pool(tmp_path):
    stats = latency_stats([make_trace([0, 0], [None, None], 6)], 0.5)
    path = ResultStore(str(tmp_path)).export_stats(stats, "stats.json")

    def reject(constant):
        raise AssertionError(f"non-standard JSON constant {constant}")

    data = json.loads(open(path).read(), parse_constant=reject)
    assert data["mean"] is None and data["max"] is None
    assert data["censored_fraction"] == 1.0
