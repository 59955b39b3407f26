import csv

import pytest

from spinsim.nic import NicParams
from spinsim.report import (
    TRACE_COLUMNS, read_trace, replay, trace_text, validate_report, write_results, write_trace,
)
from spinsim.workloads.common import IncompleteRun, Setup
from spinsim.workloads.datatype import VectorDatatype, run_datatype
from spinsim.workloads.matching import run_matching
from spinsim.workloads.pingpong import run_pingpong
from spinsim.workloads.raid import RaidConfig, RaidArray

TRACED = Setup(trace=True)


@pytest.mark.parametrize("mode", ["rdma", "portals4", "spin_store", "spin_stream"])
def test_pingpong_trace_replays_to_report(mode):
    rep = run_pingpong(mode, 65536, TRACED)
    assert validate_report(rep) == []


@pytest.mark.parametrize("scenario,size", [("I", 8), ("II", 65536), ("III", 8), ("IV", 65536)])
def test_matching_trace_replays_to_report(scenario, size):
    assert validate_report(run_matching("spin_store", scenario, size, TRACED)) == []


def test_datatype_trace_replays_to_report():
    rep = run_datatype("spin_stream", VectorDatatype(0, 2560, 1536, 64), TRACED)
    assert validate_report(rep) == []


def test_flow_control_run_replays_to_report():
    setup = Setup(trace=True, nic=NicParams(num_hpus=1, flow_queue_depth=2))
    arr = RaidArray("spin_stream", setup, RaidConfig(block_size=4096, stripes=16))
    with pytest.raises(IncompleteRun):
        arr.update(0, bytes(4096 * 16 * 4))
    st = arr.cluster.stats
    assert st.flow_control_events >= 1 and st.packets_dropped > 0
    m = replay(arr.cluster.tracer.rows, 6, 1)
    assert m["packets_dropped"] == st.packets_dropped
    assert m["flow_control_events"] == st.flow_control_events
    assert m["packets_sent"] == m["packets_delivered"] + m["packets_dropped"]


def test_validation_catches_tampering():
    rep = run_pingpong("spin_stream", 8, TRACED)
    rep.packets_sent += 1
    assert any("packets_sent" in p for p in validate_report(rep))
    rep.trace = None
    assert validate_report(rep) == ["report carries no trace"]


def test_replay_rejects_unordered_rows():
    rows = [(5, 0, "wire", "PacketSend", 1, 0, ""), (4, 0, "wire", "PacketSend", 1, 1, "")]
    with pytest.raises(ValueError):
        replay(rows, 1, 1)


def test_trace_file_round_trip(tmp_path):
    rep = run_pingpong("spin_stream", 10_000, TRACED)
    p = tmp_path / "t.csv"
    write_trace(p, rep.trace)
    assert read_trace(p) == rep.trace
    assert p.read_text() == trace_text(rep.trace)
    assert p.read_text().splitlines()[0] == ",".join(TRACE_COLUMNS)


def test_every_message_completes_once_in_trace():
    rep = run_pingpong("spin_stream", 65536, TRACED)
    done = [r[4] for r in rep.trace if r[3] == "Completion"]
    assert len(done) == len(set(done))


def test_results_rows_and_determinism(tmp_path):
    a = [run_pingpong(m, 4096, TRACED) for m in ("rdma", "spin_store")]
    b = [run_pingpong(m, 4096, TRACED) for m in ("rdma", "spin_store")]
    write_results(tmp_path / "a.csv", a)
    write_results(tmp_path / "b.csv", b)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    with open(tmp_path / "a.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["experiment", "mode", "profile", "sweep_value", "metric", "value"]
    lat = [r for r in rows[1:] if r[1] == "rdma" and r[4] == "latency_ps"]
    assert lat == [["pingpong", "rdma", "discrete", "4096", "latency_ps", str(a[0].latency_ps)]]
