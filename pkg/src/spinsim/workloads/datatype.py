"""Strided vector datatype unpacked at the receiver.

Message byte ``m`` belongs at host offset
``start + (m // blocksize) * stride + m % blocksize``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

from ..baselines import rdma_post
from ..handlers import HandlerProgram, PayloadReturn
from ..nic import MatchEntry
from ..report import RunReport
from .common import Mode, Setup, UnsupportedMode, as_mode, incomplete, pattern

DTYPE = 5
_TUPLE = struct.Struct("<4Q")


@dataclass(frozen=True)
class VectorDatatype:
    start: int
    stride: int
    blocksize: int
    count: int

    def __post_init__(self):
        if self.start < 0 or self.blocksize < 1 or self.count < 1 or self.blocksize > self.stride:
            raise ValueError(f"invalid vector datatype {self}")

    @property
    def size(self) -> int:
        return self.blocksize * self.count

    @property
    def extent(self) -> int:
        """Bytes of host memory spanned, counted from offset 0."""
        return self.start + (self.count - 1) * self.stride + self.blocksize

    def pack(self) -> bytes:
        return _TUPLE.pack(self.start, self.stride, self.blocksize, self.count)

    @classmethod
    def unpack(cls, raw: bytes) -> "VectorDatatype":
        return cls(*_TUPLE.unpack(raw[:_TUPLE.size]))


def vector_segments(dt: VectorDatatype, offset: int, length: int) -> list[tuple[int, int]]:
    """Contiguous ``(host_offset, len)`` pieces for message bytes ``[offset, offset+length)``."""
    out = []
    m = offset
    end = offset + length
    while m < end:
        block, within = divmod(m, dt.blocksize)
        n = min(dt.blocksize - within, end - m)
        host = dt.start + block * dt.stride + within
        if out and out[-1][0] + out[-1][1] == host:
            # blocks that touch (stride == blocksize) form one DMA
            out[-1] = (out[-1][0], out[-1][1] + n)
        else:
            out.append((host, n))
        m += n
    return out


def scatter_oracle(dt: VectorDatatype, data: bytes) -> bytes:
    """Byte-by-byte reference unpack into a zeroed buffer of ``dt.extent`` bytes."""
    out = bytearray(dt.extent)
    for m, byte in enumerate(data):
        out[dt.start + (m // dt.blocksize) * dt.stride + m % dt.blocksize] = byte
    return bytes(out)


def _unpack_payload(ctx, p, state):
    dt = VectorDatatype.unpack(state.read(0, _TUPLE.size))
    seg_cycles = state.read_u64(_TUPLE.size)
    base = ctx.header.offset + p.offset
    pos = 0
    for host_off, n in vector_segments(dt, base, p.length):
        yield ctx.charge(seg_cycles)
        ctx.dma_to_host_nb(p.data[pos:pos + n], host_off)
        pos += n
    return PayloadReturn.SUCCESS


def run_datatype(mode, dt: VectorDatatype, setup: Optional[Setup] = None,
                 sweep_value=None) -> RunReport:
    """Node 0 sends ``dt.size`` packed bytes; node 1 scatters them per ``dt``.

    Bandwidth is message size over time from the send post until the last
    byte sits at its strided location.
    """
    mode = as_mode(mode)
    if mode is Mode.PORTALS4:
        raise UnsupportedMode("Portals 4 has no strided receive; use rdma or spin_*")
    setup = setup or Setup()
    cl = setup.cluster(2)
    origin, target = cl.nodes
    size = dt.size
    data = pattern(size, setup.seed)
    src = origin.host.fill(size, data)
    region = target.host.fill(dt.extent)
    done = {}

    if mode.is_spin:
        state = dt.pack() + struct.pack("<Q", int(setup.cost("datatype", "segment_cycles")))
        prog = HandlerProgram(payload=_unpack_payload, name="vector_unpack",
                              base_cycles=setup.cost("datatype", "base_cycles"),
                              cycles_per_byte=setup.cost("datatype", "cycles_per_byte"))
        target.nic.me_append(MatchEntry(match_bits=DTYPE, host_region=(region, dt.extent),
                                        program=prog, initial_state=state,
                                        on_complete=lambda t, r: done.setdefault("t", t)))
    else:
        tmp = target.host.fill(size)
        host = target.host

        def unpack():
            t = cl.now
            for i in range(dt.count):
                t = host.copy(t, tmp + i * dt.blocksize, region + dt.start + i * dt.stride,
                              dt.blocksize)
            done["t"] = t

        target.nic.me_append(MatchEntry(match_bits=DTYPE, host_region=(tmp, size),
                                        on_complete=lambda t, r: host.react(t, unpack)))

    rdma_post(origin, 0, 1, host_offset=src, length=size, match_bits=DTYPE)
    cl.run()
    if "t" not in done:
        raise incomplete(cl, "datatype")
    rep = RunReport.from_cluster(
        cl, "datatype", mode.value, latency_ps=done["t"], payload_bytes=size,
        sweep_param="blocksize", sweep_value=dt.blocksize if sweep_value is None else sweep_value,
        extra={"msg_size": size, "stride": dt.stride, "count": dt.count})
    rep.artifacts["layout"] = target.host.memory.read(region, dt.extent)
    rep.artifacts["data"] = data
    return rep
