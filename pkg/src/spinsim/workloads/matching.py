"""Eager and rendezvous message matching between a sender and a receiver.

Scenarios by receive posting order and message size:

    I    receive posted first, size <= eager threshold
    II   receive posted first, size >  eager threshold (rendezvous)
    III  message arrives first, size <= eager threshold
    IV   message arrives first, size >  eager threshold (rendezvous)

A rendezvous send exposes the source buffer under a unique source tag and
sends a 64 B request-to-send whose user header holds ``(total, source_tag)``.
With sPIN the receiver's header handler issues the get itself; otherwise
the host reads the request and posts the get. Unexpected messages land in
a NIC-allocated buffer and the host copies them once the receive is posted.
RDMA has no NIC matching, so every message takes that path.
"""

from __future__ import annotations

import struct
from typing import Optional

from ..baselines import rdma_post
from ..handlers import HandlerProgram, HeaderReturn
from ..nic import MatchEntry, ReplySink
from ..report import RunReport
from .common import Mode, Setup, as_mode, incomplete, pattern

TAG = 0x2A
SOURCE_TAG_BIT = 1 << 63
SOURCE_MASK = 0xFFFF << 32   # bits a wildcard receive ignores
RTS_BYTES = 64
SCENARIOS = ("I", "II", "III", "IV")


def match_bits(tag: int, source: int) -> int:
    return (source & 0xFFFF) << 32 | (tag & 0xFFFF_FFFF)


def as_scenario(s) -> str:
    if isinstance(s, int) and 1 <= s <= 4:
        return SCENARIOS[s - 1]
    if str(s).upper() in SCENARIOS:
        return str(s).upper()
    raise ValueError(f"unknown matching scenario {s!r}; expected one of {SCENARIOS}")


def _rendezvous_header(ctx, h, state):
    eager = state.read_u64(0)
    if h.hdr_data <= eager:
        return HeaderReturn.PROCEED
    total, source_tag = h.user_u64(0), h.user_u64(1)
    # no per-source state: the request names its own source and buffer
    ctx.get(h.source_id, source_tag, total)
    state.write_u64(8, state.read_u64(8) + 1)
    return HeaderReturn.DROP_PENDING


def run_matching(mode, scenario, msg_size: int, setup: Optional[Setup] = None,
                 eager_threshold: Optional[int] = None, any_source: bool = True) -> RunReport:
    """Latency runs from the send post until the data sits in the receive buffer."""
    mode = as_mode(mode)
    scenario = as_scenario(scenario)
    setup = setup or Setup()
    cl = setup.cluster(2)
    sender, receiver = cl.nodes
    eager = cl.network.mtu if eager_threshold is None else eager_threshold
    large = msg_size > eager
    if large != (scenario in ("II", "IV")):
        raise ValueError(f"scenario {scenario} needs msg_size {'>' if not large else '<='} "
                         f"eager threshold {eager}, got {msg_size}")
    preposted = scenario in ("I", "II")

    data = pattern(msg_size, setup.seed)
    src = sender.host.fill(msg_size, data)
    recv = receiver.host.fill(msg_size)
    bits = match_bits(TAG, sender.node_id)
    recv_bits = match_bits(TAG, 0)
    ignore = SOURCE_MASK if any_source else 0
    done = {}
    counts = {"gets": 0, "rts": 0, "copies": 0}

    def finish(t, *_):
        done.setdefault("t", t)

    host = receiver.host
    hp = host.params

    def get_into_recv(t, source, source_tag, total):
        # host-driven rendezvous: pay the send overhead, then fetch
        def issue(t_post):
            counts["gets"] += 1
            receiver.nic.get(source, match_bits=source_tag, length=total,
                             sink=ReplySink(recv, total, finish))
        host.post(t, issue)

    def on_unexpected(rec):
        # receive gets posted: the host searches the unexpected list and takes over
        def work():
            got = receiver.nic.take_unexpected(recv_bits, ignore)
            if got is None:
                return
            if got.hdr_data <= eager:
                counts["copies"] += 1
                finish(host.copy(cl.now, got.buffer_offset, recv, got.length))
            else:
                t = host.mem_access(cl.now, read=RTS_BYTES)
                total, source_tag = struct.unpack_from("<QQ", got.user_hdr)
                get_into_recv(t, got.source, source_tag, total)
        host.react(cl.now, work, extra=hp.host_match)

    if mode is Mode.RDMA or not preposted:
        receiver.nic.unexpected_listeners.append(on_unexpected)
    else:
        me = MatchEntry(match_bits=recv_bits, ignore_bits=ignore, host_region=(recv, msg_size),
                        name="recv")
        if mode.is_spin:
            me.program = HandlerProgram(header=_rendezvous_header, name="rendezvous",
                                        base_cycles=setup.cost("matching", "base_cycles"),
                                        cycles_per_byte=setup.cost("matching", "cycles_per_byte"),
                                        user_hdr_size=RTS_BYTES)
            me.initial_state = struct.pack("<Q", eager)
            me.hpu_memory = receiver.nic.alloc_hpu_mem(64)
            me.on_complete = finish
        elif large:
            # Portals 4 without handlers: the host reads the request and issues the get
            rts_buf = receiver.host.fill(RTS_BYTES)
            me.host_region = (rts_buf, RTS_BYTES)

            def on_rts(t, rec):
                def work():
                    t2 = host.mem_access(cl.now, read=RTS_BYTES)
                    total, source_tag = struct.unpack_from("<QQ", rec.user_hdr)
                    get_into_recv(t2, rec.source, source_tag, total)
                host.react(t, work)
            me.on_complete = on_rts
        else:
            me.on_complete = finish
        receiver.nic.me_append(me)

    if large:
        source_tag = SOURCE_TAG_BIT | cl.new_msg_id()
        sender.nic.me_append(MatchEntry(match_bits=source_tag, host_region=(src, msg_size),
                                        name="source"))
        rts = sender.host.fill(RTS_BYTES, struct.pack("<QQ", msg_size, source_tag).ljust(RTS_BYTES,
                                                                                       b"\0"))
        counts["rts"] += 1
        rdma_post(sender, 0, receiver.node_id, host_offset=rts, length=RTS_BYTES,
                  match_bits=bits, hdr_data=msg_size)
    else:
        rdma_post(sender, 0, receiver.node_id, host_offset=src, length=msg_size,
                  match_bits=bits, hdr_data=msg_size)
    cl.run()
    if mode.is_spin and preposted:
        counts["gets"] += me.hpu_memory.read_u64(8)
    if "t" not in done:
        raise incomplete(cl, f"matching scenario {scenario}")
    if receiver.host.memory.read(recv, msg_size) != data:
        raise RuntimeError("receive buffer differs from the sent message")
    rep = RunReport.from_cluster(
        cl, "matching", mode.value, latency_ps=done["t"], payload_bytes=msg_size,
        sweep_param="msg_size", sweep_value=msg_size,
        extra={"scenario": scenario, "eager_threshold": eager, "gets": counts["gets"],
               "rts_messages": counts["rts"], "host_copies": counts["copies"]})
    return rep
