"""Built-in acceptance checks.

Each check runs fixed configurations and returns a pass flag with a short
explanation. ``run_verify`` writes every report it produced to
``results.csv`` plus traces for a handful of small runs, so two runs of the
suite can be compared byte for byte.
"""

from __future__ import annotations

import filecmp
import os
import random
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

from . import sizing
from .network import NetworkParams
from .nic import NicParams
from .report import RunReport, validate_report
from .runner import write_outputs
from .workloads import (
    RaidConfig, Setup, VectorDatatype, run_accumulate, run_broadcast, run_datatype, run_matching,
    run_pingpong, run_raid_update, run_train,
)
from .workloads.accumulate import make_arrays
from .workloads.broadcast import binomial_rounds
from .workloads.datatype import scatter_oracle, vector_segments
from .workloads.raid import RaidArray

SEED = 1
LINE_RATE = 50e9
# runs that must not hit flow control: the model has no retransmission
DEEP_QUEUE = NicParams(flow_queue_depth=10**6)


@dataclass
class Check:
    number: int
    title: str
    passed: bool
    detail: str
    reports: list = field(default_factory=list, repr=False)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:>2}. {self.title}: {self.detail}"


def _pct(x: float) -> str:
    return f"{100 * x:.1f}%"


def check_sizing_anchors() -> Check:
    small = {s: sizing.hpus_needed(53_000, s) for s in range(1, 336)}
    large = sizing.hpus_needed(650_000, 4096)
    bad = {s: n for s, n in small.items() if n != 8}
    ok = not bad and large == 8
    return Check(1, "sizing anchors", ok,
                 f"hpus_needed(53ns, s<=335) = {sorted(set(small.values()))}, "
                 f"hpus_needed(650ns, 4096) = {large}")


def check_crossover() -> Check:
    net = NetworkParams()
    cross = net.crossover_bytes
    g_rate = Fraction(10**12, net.g)
    flat = all(abs(sizing.arrival_rate(s) - g_rate) / g_rate <= Fraction(1, 100)
               for s in range(1, 336))
    switched = sizing.packet_interval(335) == net.g and sizing.packet_interval(336) > net.g
    r4096 = float(sizing.arrival_rate(4096))
    near = abs(r4096 - 12.5e6) / 12.5e6 <= 0.03
    ok = cross == 335 and flat and switched and near
    return Check(2, "crossover", ok,
                 f"g/G = {cross} B, rate(<=335) = 1/g: {flat}, rate(4096) = {r4096 / 1e6:.3f} Mpps")


def check_buffer() -> Check:
    b = sizing.buffer_overhead(Fraction(10**12, 8), 200_000)
    return Check(3, "buffer overhead", b == 25_000, f"1 Tb/s x 200 ns = {b} B")


def multiply_oracle(a, b) -> list[complex]:
    # element by element in plain Python, independent of the handler's numpy path
    out = []
    for x, y in zip(a.tolist(), b.tolist()):
        out.append(complex(x.real * y.real - x.imag * y.imag, x.real * y.imag + x.imag * y.real))
    return out


def check_accumulate() -> Check:
    reports, ok, parts = [], True, []
    for n in (16, 4096, 65536, 1 << 20):
        a, b = make_arrays(n, SEED)
        expect = multiply_oracle(a, b)
        by_mode = {}
        for mode in ("rdma", "spin_store", "spin_stream"):
            rep = run_accumulate(mode, n, Setup(seed=SEED), arrays=(a, b))
            reports.append(rep)
            by_mode[mode] = rep.host_reads[1] + rep.host_writes[1]
            got = rep.artifacts["result"].tolist()
            ok &= all(abs(g - e) <= 1e-12 * max(1.0, abs(e)) for g, e in zip(got, expect))
        for mode in ("spin_store", "spin_stream"):
            ok &= by_mode["rdma"] == 2 * by_mode[mode]
        parts.append(f"N={n}: {by_mode['rdma']}/{by_mode['spin_store']}")
    return Check(4, "accumulate traffic ratio", ok,
                 "RDMA/sPIN host bytes " + ", ".join(parts), reports)


def check_pingpong() -> Check:
    reports, ok, parts = [], True, []
    lat = {}
    for size in (8, 64, 4096, 8192, 65536, 1 << 20):
        for mode in ("rdma", "portals4", "spin_store", "spin_stream"):
            rep = run_pingpong(mode, size, Setup(seed=SEED))
            reports.append(rep)
            lat[mode, size] = rep.latency_ps
    for size in (8192, 65536, 1 << 20):
        good = (lat["spin_stream", size] < lat["spin_store", size] <= lat["portals4", size]
                < lat["rdma", size])
        ok &= good
        parts.append(f"{size}B order {'ok' if good else 'violated'}")
    gaps = [lat["portals4", s] - lat["spin_store", s] for s in (8, 64, 4096)]
    ok &= min(gaps) >= 400_000
    parts.append(f"single-packet P4-store gap >= {min(gaps) / 1000:.1f} ns")
    return Check(5, "ping-pong ordering", ok, ", ".join(parts), reports)


def random_datatype_case(rng: random.Random) -> tuple[VectorDatatype, int]:
    blocksize = rng.randint(1, 600)
    stride = blocksize + rng.randint(0, 700)
    count = rng.randint(1, 24)
    start = rng.randint(0, 300)
    mtu = 64 * rng.randint(1, 64)
    return VectorDatatype(start, stride, blocksize, count), mtu


def check_datatype_oracle(cases: int = 1000) -> Check:
    segs = vector_segments(VectorDatatype(0, 2560, 1536, 8), 4096, 4096)
    worked = segs == [(6144, 512), (7680, 1536), (10240, 1536), (12800, 512)]
    ok = worked
    rng = random.Random(SEED)
    bad = 0
    for i in range(cases):
        dt, mtu = random_datatype_case(rng)
        mode = "spin_stream" if i % 2 else "spin_store"
        setup = Setup(seed=SEED + i, network=NetworkParams(mtu=mtu), nic=DEEP_QUEUE,
                      permute_packets=True)
        rep = run_datatype(mode, dt, setup)
        if rep.artifacts["layout"] != scatter_oracle(dt, rep.artifacts["data"]):
            bad += 1
    ok &= bad == 0
    return Check(6, "datatype oracle", ok,
                 f"worked example segments {'exact' if worked else 'wrong'}; "
                 f"{cases - bad}/{cases} shuffled random tuples match")


def check_datatype_bandwidth() -> Check:
    reports, ok, parts = [], True, []
    size = 4 << 20
    setup = Setup(profile="integrated", nic=DEEP_QUEUE, seed=SEED)
    for bs in (64, 128, 256, 512, 1024, 2048, 4096, 8192):
        dt = VectorDatatype(0, 2 * bs, bs, size // bs)
        spin = run_datatype("spin_stream", dt, setup)
        rdma = run_datatype("rdma", dt, setup)
        reports += [spin, rdma]
        fs = spin.bandwidth_bytes_per_s / LINE_RATE
        fr = rdma.bandwidth_bytes_per_s / LINE_RATE
        if bs >= 512:
            ok &= fs >= 0.90
        if bs >= 256:
            ok &= fs > fr
        if bs <= 1024:
            ok &= fr < 0.20
        parts.append(f"{bs}B {_pct(fs)}/{_pct(fr)}")
    return Check(7, "datatype bandwidth", ok,
                 "sPIN/RDMA of line rate: " + ", ".join(parts), reports)


def check_broadcast() -> Check:
    reports, ok, parts = [], True, []
    for P in (64, 256, 1024):
        for size in (8, 65536):
            t = {}
            for mode in ("rdma", "portals4", "spin_stream"):
                rep = run_broadcast(mode, P, size, Setup(seed=SEED))
                reports.append(rep)
                t[mode] = rep.latency_ps
                ok &= rep.extra["messages"] == P - 1
                ok &= rep.extra["rounds"] == binomial_rounds(P)
            good = t["spin_stream"] < t["portals4"] < t["rdma"]
            ok &= good
            parts.append(f"P={P} {size}B {'ok' if good else 'violated'}")
    return Check(8, "broadcast structure and ordering", ok, ", ".join(parts), reports)


def check_raid(updates: int = 25) -> Check:
    reports, ok, parts = [], True, []
    setup = Setup(seed=SEED, nic=NicParams(flow_queue_depth=1024))
    for mode in ("rdma", "spin_store", "spin_stream"):
        arr = RaidArray(mode, setup, RaidConfig(stripes=16))
        cap = arr.config.capacity
        ref = bytearray(arr.logical(0, cap))
        rng = random.Random(SEED)
        for _ in range(updates):
            n = rng.randint(1, 3 * arr.config.block_size)
            off = rng.randint(0, cap - n)
            data = rng.randbytes(n)
            arr.update(off, data)
            ref[off:off + n] = data
        good = arr.stripes_consistent() and arr.logical(0, cap) == bytes(ref)
        ok &= good
        parts.append(f"{mode} invariant {'holds' if good else 'broken'}")
    for size in (64 << 10, 256 << 10, 1 << 20):
        t = {}
        for mode in ("rdma", "spin_store", "spin_stream"):
            rep = run_raid_update(mode, size, setup)
            reports.append(rep)
            t[mode] = rep.latency_ps
            ok &= rep.extra["stripes_consistent"] == 1
        good = t["spin_store"] < t["rdma"] and t["spin_stream"] < t["rdma"]
        ok &= good
        parts.append(f"{size >> 10}KiB sPIN {t['spin_stream'] / t['rdma']:.2f}x RDMA")
    return Check(9, "RAID invariant and speed", ok, ", ".join(parts), reports)


LITTLE_CASES = ((53_000, 64), (650_000, 4096))


def check_little(packets: int = 10_000) -> Check:
    reports, ok, parts = [], True, []
    for t_ps, s in LITTLE_CASES:
        n = sizing.hpus_needed(t_ps, s)
        fit = run_train(packets, s, t_ps, setup=Setup(seed=SEED))
        t_over = Fraction(6, 5) * sizing.max_handler_time(n - 1, s)
        over = run_train(packets, s, t_over, num_hpus=n - 1, setup=Setup(seed=SEED))
        reports += [fit, over]
        bounded = fit.extra["occupancy_max"] <= n and fit.extra["occupancy_end"] <= n
        early, end = over.extra["occupancy_10pct"], over.extra["occupancy_end"]
        grows = end > 10 * early
        ok &= bounded and grows
        parts.append(f"T={t_ps / 1000:g}ns s={s}: {n} HPUs max queue {fit.extra['occupancy_max']}, "
                     f"{n - 1} HPUs queue {early}->{end}")
    return Check(10, "Little's law", ok, "; ".join(parts), reports)


def traced_reports() -> list[RunReport]:
    """Small runs whose traces are written and replayed."""
    out = []
    setup = Setup(seed=SEED, trace=True)
    for mode in ("rdma", "portals4", "spin_store", "spin_stream"):
        for size in (8, 65536):
            out.append(run_pingpong(mode, size, setup))
    for scenario, size in (("I", 8), ("II", 65536), ("III", 8), ("IV", 65536)):
        out.append(run_matching("spin_store", scenario, size, setup))
    out.append(run_raid_update("spin_stream", 65536, setup.with_(nic=NicParams(flow_queue_depth=1024))))
    return out


def check_trace_replay(reports: list[RunReport]) -> Check:
    problems = []
    for rep in reports:
        problems += [f"{rep.experiment}/{rep.mode}/{rep.sweep_value}: {p}"
                     for p in validate_report(rep)]
    ok = not problems
    return Check(0, "trace replay", ok,
                 f"{len(reports)} traces re-derive their reports" if ok else "; ".join(problems[:3]),
                 reports)


CHECKS: tuple[Callable[[], Check], ...] = (
    check_sizing_anchors, check_crossover, check_buffer, check_accumulate, check_pingpong,
    check_datatype_oracle, check_datatype_bandwidth, check_broadcast, check_raid, check_little,
)


def check_rows(checks: list[Check]) -> list[RunReport]:
    """Pass flags as report rows so ``results.csv`` records the verdicts."""
    return [RunReport("verify", "check", "-", "criterion", c.number, extra={"passed": int(c.passed)})
            for c in checks]


def run_suite(out_dir, log: Optional[Callable[[str], None]] = None) -> list[Check]:
    checks = []
    for fn in CHECKS:
        c = fn()
        checks.append(c)
        if log:
            log(c.line())
    traced = traced_reports()
    replay = check_trace_replay(traced)
    checks.append(replay)
    if log:
        log(replay.line())
    reports = [r for c in checks for r in c.reports if r.trace is None]
    write_outputs(out_dir, reports + traced + check_rows(checks))
    return checks


def same_outputs(a: str, b: str) -> tuple[bool, list[str]]:
    """Compare two verify output directories file by file."""
    diff = []
    for root, _dirs, files in os.walk(a):
        for f in files:
            pa = os.path.join(root, f)
            pb = os.path.join(b, os.path.relpath(pa, a))
            if not os.path.exists(pb) or not filecmp.cmp(pa, pb, shallow=False):
                diff.append(os.path.relpath(pa, a))
    for root, _dirs, files in os.walk(b):
        for f in files:
            if not os.path.exists(os.path.join(a, os.path.relpath(os.path.join(root, f), b))):
                diff.append(os.path.relpath(os.path.join(root, f), b))
    return not diff, sorted(diff)


def run_verify(out_dir, log: Optional[Callable[[str], None]] = None) -> list[Check]:
    """Run the suite into ``out_dir``, then again into a scratch directory for determinism."""
    checks = run_suite(out_dir, log)
    with tempfile.TemporaryDirectory() as tmp:
        run_suite(tmp)
        same, diff = same_outputs(out_dir, tmp)
    n_files = sum(len(f) for _r, _d, f in os.walk(out_dir))
    det = Check(11, "determinism", same,
                f"{n_files} output files byte-identical across two runs" if same
                else f"differs: {', '.join(diff[:5])}")
    checks.append(det)
    if log:
        log(det.line())
    return checks
