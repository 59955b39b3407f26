"""Remote accumulate: ``dst[i] *= src[i]`` over arrays of double complex."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..baselines import rdma_post
from ..handlers import HandlerProgram, PayloadReturn
from ..nic import MatchEntry
from ..report import RunReport
from .common import Mode, Setup, UnsupportedMode, as_mode, incomplete

ACC = 3
ELEM = 16  # bytes per double complex


def _accumulate(ctx, p, state):
    cur = yield ctx.dma_from_host(p.offset, p.length)
    out = np.frombuffer(cur, dtype=np.complex128) * np.frombuffer(p.data, dtype=np.complex128)
    ctx.dma_to_host_nb(out.tobytes(), p.offset)
    return PayloadReturn.SUCCESS


def make_arrays(n_bytes: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    k = n_bytes // ELEM
    a = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    b = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    return a.astype(np.complex128), b.astype(np.complex128)


def run_accumulate(mode, n_bytes: int, setup: Optional[Setup] = None,
                   arrays: Optional[tuple[np.ndarray, np.ndarray]] = None) -> RunReport:
    """Node 0 sends ``a``; node 1 multiplies it into its local ``b``.

    Latency runs from the send post to the last result byte in host memory
    at node 1; the final array is in ``report.artifacts['result']``.
    """
    mode = as_mode(mode)
    if mode is Mode.PORTALS4:
        raise UnsupportedMode("Portals 4 cannot compute on arriving data; use rdma or spin_*")
    if n_bytes < 0 or n_bytes % ELEM:
        raise ValueError(f"N must be a non-negative multiple of {ELEM} B")
    setup = setup or Setup()
    if setup.network.mtu % ELEM:
        raise ValueError("mtu must be a multiple of 16 B for element-aligned packets")
    cl = setup.cluster(2)
    origin, target = cl.nodes
    a, b = arrays if arrays is not None else make_arrays(n_bytes, setup.seed)
    src = origin.host.fill(n_bytes, a.tobytes())
    dst = target.host.fill(n_bytes, b.tobytes())
    done = {}

    if mode.is_spin:
        prog = HandlerProgram(payload=_accumulate, name="accumulate",
                              base_cycles=setup.cost("accumulate", "base_cycles"),
                              cycles_per_byte=setup.cost("accumulate", "cycles_per_byte"))
        target.nic.me_append(MatchEntry(match_bits=ACC, host_region=(dst, n_bytes), program=prog,
                                        on_complete=lambda t, r: done.setdefault("t", t)))
    else:
        tmp = target.host.fill(n_bytes)
        host = target.host

        def compute():
            t = host.mem_access(cl.now, read=2 * n_bytes, write=n_bytes)
            x = np.frombuffer(host.memory.read(tmp, n_bytes), dtype=np.complex128)
            y = np.frombuffer(host.memory.read(dst, n_bytes), dtype=np.complex128)
            host.memory.write(dst, (y * x).tobytes())
            done["t"] = t

        target.nic.me_append(MatchEntry(match_bits=ACC, host_region=(tmp, n_bytes),
                                        on_complete=lambda t, r: host.react(t, compute)))

    rdma_post(origin, 0, 1, host_offset=src, length=n_bytes, match_bits=ACC)
    cl.run()
    if "t" not in done:
        raise incomplete(cl, "accumulate")
    rep = RunReport.from_cluster(cl, "accumulate", mode.value, latency_ps=done["t"],
                                 payload_bytes=n_bytes, sweep_param="N", sweep_value=n_bytes,
                                 extra={"target_reads": cl.stats.host_reads[1],
                                        "target_writes": cl.stats.host_writes[1]})
    rep.artifacts["result"] = np.frombuffer(target.host.memory.read(dst, n_bytes),
                                            dtype=np.complex128)
    return rep
