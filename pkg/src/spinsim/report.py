"""Run reports, results/trace CSV output and the trace replay validator."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .cluster import TRACE_COLUMNS, Cluster

RESULT_COLUMNS = ("experiment", "mode", "profile", "sweep_value", "metric", "value")

# per-node rows are only emitted for small clusters; totals are always present
PER_NODE_LIMIT = 8


@dataclass
class RunReport:
    experiment: str
    mode: str
    profile: str
    sweep_param: str = ""
    sweep_value: Any = ""
    latency_ps: int = 0
    bandwidth_bytes_per_s: float = 0.0
    host_reads: list = field(default_factory=list)
    host_writes: list = field(default_factory=list)
    hpu_busy_ps: list = field(default_factory=list)
    packets_sent: int = 0
    packets_delivered: int = 0
    packets_dropped: int = 0
    flow_control_events: int = 0
    handler_counts: dict = field(default_factory=dict)
    cpu_reaction_ps: int = 0
    extra: dict = field(default_factory=dict)
    trace: Optional[list] = field(default=None, repr=False)
    # in-memory outputs for checks (final buffers and the like); never serialized
    artifacts: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_cluster(cls, cluster: Cluster, experiment: str, mode: str, *, latency_ps: int,
                     payload_bytes: int = 0, sweep_param: str = "", sweep_value: Any = "",
                     extra: Optional[dict] = None) -> "RunReport":
        st = cluster.stats
        bw = payload_bytes * 1e12 / latency_ps if latency_ps and payload_bytes else 0.0
        return cls(
            experiment=experiment, mode=mode, profile=cluster.dma.profile.value,
            sweep_param=sweep_param, sweep_value=sweep_value, latency_ps=latency_ps,
            bandwidth_bytes_per_s=bw, host_reads=list(st.host_reads),
            host_writes=list(st.host_writes), hpu_busy_ps=list(st.hpu_busy_ps),
            packets_sent=st.packets_sent, packets_delivered=st.packets_delivered,
            packets_dropped=st.packets_dropped, flow_control_events=st.flow_control_events,
            handler_counts=dict(st.handler_counts),
            cpu_reaction_ps=cluster.host_params.cpu_reaction,
            extra=dict(extra or {}),
            trace=list(cluster.tracer.rows) if cluster.tracer.enabled else None)

    def metrics(self) -> list[tuple[str, Any]]:
        out: list[tuple[str, Any]] = [
            ("latency_ps", self.latency_ps),
            ("bandwidth_bytes_per_s", _fmt_float(self.bandwidth_bytes_per_s)),
            ("host_reads_total", sum(self.host_reads)),
            ("host_writes_total", sum(self.host_writes)),
        ]
        if len(self.host_reads) <= PER_NODE_LIMIT:
            for i, (r, w) in enumerate(zip(self.host_reads, self.host_writes)):
                out.append((f"host_reads[{i}]", r))
                out.append((f"host_writes[{i}]", w))
        for i, b in enumerate(self.hpu_busy_ps):
            out.append((f"hpu_busy_ps[{i}]", b))
        out += [
            ("packets_sent", self.packets_sent),
            ("packets_delivered", self.packets_delivered),
            ("packets_dropped", self.packets_dropped),
            ("flow_control_events", self.flow_control_events),
        ]
        for kind in sorted(self.handler_counts):
            out.append((f"handlers_{kind}", self.handler_counts[kind]))
        out.append(("cpu_reaction_ps", self.cpu_reaction_ps))
        for key in sorted(self.extra):
            v = self.extra[key]
            out.append((key, _fmt_float(v) if isinstance(v, float) else v))
        return out

    def rows(self) -> list[tuple]:
        return [(self.experiment, self.mode, self.profile, self.sweep_value, m, v)
                for m, v in self.metrics()]


def _fmt_float(v: float) -> str:
    return repr(float(v))


def write_results(path, reports: Iterable[RunReport]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for rep in reports:
            w.writerows(rep.rows())


def write_trace(path, rows: Iterable[tuple]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        w.writerows(rows)


def read_trace(path) -> list[tuple]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {header}")
        return [(int(t), int(n), u, e, int(m), int(p), d) for t, n, u, e, m, p, d in r]


def trace_text(rows: Iterable[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    w.writerows(rows)
    return buf.getvalue()


def _detail(s: str) -> dict:
    out = {}
    if s:
        for part in s.split(";"):
            k, _, v = part.partition("=")
            out[k] = v
    return out


def replay(rows: Iterable[tuple], num_nodes: int, num_hpus: int) -> dict:
    """Re-derive counter metrics from a trace alone."""
    m = {
        "packets_sent": 0, "packets_delivered": 0, "packets_dropped": 0,
        "flow_control_events": 0,
        "handler_counts": {"header": 0, "payload": 0, "completion": 0},
        "host_reads": [0] * num_nodes, "host_writes": [0] * num_nodes,
        "hpu_busy_ps": [0] * num_hpus,
    }
    last = -1
    for time, node, unit, event, _msg, _pkt, detail in rows:
        if time < last:
            raise ValueError(f"trace not time-ordered at t={time}")
        last = time
        d = _detail(detail)
        if event == "PacketSend":
            m["packets_sent"] += 1
        elif event == "PacketAccept":
            m["packets_delivered"] += 1
        elif event == "PacketReject":
            m["packets_delivered"] -= 1
        elif event == "PacketDrop":
            m["packets_dropped"] += 1
        elif event == "FlowControlOn":
            m["flow_control_events"] += 1
        elif event == "HandlerStart":
            m["handler_counts"][d["kind"]] += 1
        elif event == "HostMem":
            m["host_reads"][node] += int(d["read"])
            m["host_writes"][node] += int(d["write"])
        elif event == "HpuRelease":
            m["hpu_busy_ps"][int(unit[3:])] += int(d["busy"])
    return m


def validate_report(report: RunReport, rows: Optional[list] = None) -> list[str]:
    """Compare a report with the metrics replayed from its trace; returns mismatches."""
    rows = report.trace if rows is None else rows
    if rows is None:
        return ["report carries no trace"]
    m = replay(rows, len(report.host_reads), len(report.hpu_busy_ps))
    problems = []
    for key in ("packets_sent", "packets_delivered", "packets_dropped", "flow_control_events",
                "handler_counts", "host_reads", "host_writes", "hpu_busy_ps"):
        if m[key] != getattr(report, key):
            problems.append(f"{key}: report {getattr(report, key)} != trace {m[key]}")
    if report.packets_sent != report.packets_delivered + report.packets_dropped:
        problems.append("packets_sent != delivered + dropped")
    return problems
