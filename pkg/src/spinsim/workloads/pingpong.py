"""Ping-pong between two nodes on the same leaf switch.

Node 0 posts a ping of ``msg_size`` bytes; node 1 answers with a pong of
the same size. The reported latency is the full round trip measured at
node 0; ``half_rtt_ps`` is reported alongside.
"""

from __future__ import annotations

from typing import Optional

from ..baselines import rdma_post, rdma_receive, triggered_put, Counter
from ..handlers import CompletionReturn, HandlerProgram, PayloadReturn
from ..network import packets_in
from ..nic import MatchEntry
from ..report import RunReport
from .common import Mode, Setup, as_mode, incomplete, pattern

PING = 1
PONG = 2


def _pong_payload(ctx, p, state):
    # answer straight from the packet buffer; nothing touches host memory
    yield ctx.put_from_device(p.data, ctx.header.source_id, match_bits=PONG,
                              remote_offset=p.offset)
    return PayloadReturn.SUCCESS


def _pong_empty(ctx, dropped, fc, state):
    if ctx.header.length == 0:
        yield ctx.put_from_device(b"", ctx.header.source_id, match_bits=PONG)
    return CompletionReturn.SUCCESS


def _pong_from_host(ctx, dropped, fc, state):
    ctx.put_from_host(0, ctx.header.length, ctx.header.source_id, match_bits=PONG)
    return CompletionReturn.SUCCESS


def pong_program(mode: Mode, msg_size: int, max_payload: int, setup: Setup) -> HandlerProgram:
    cost = dict(base_cycles=setup.cost("pingpong", "base_cycles"),
                cycles_per_byte=setup.cost("pingpong", "cycles_per_byte"))
    if mode is Mode.SPIN_STORE and msg_size > max_payload:
        return HandlerProgram(completion=_pong_from_host, name="pong_store_host", **cost)
    return HandlerProgram(payload=_pong_payload, completion=_pong_empty,
                          name=f"pong_{mode.value}", **cost)


def run_pingpong(mode, msg_size: int, setup: Optional[Setup] = None) -> RunReport:
    mode = as_mode(mode)
    setup = setup or Setup()
    if msg_size < 0:
        raise ValueError("msg_size must be >= 0")
    cl = setup.cluster(2)
    origin, responder = cl.nodes
    mtu = cl.network.mtu
    max_payload = cl.limits.max_payload_size

    data = pattern(msg_size, setup.seed)
    src = origin.host.fill(msg_size, data)
    back = origin.host.fill(msg_size)
    recv = responder.host.fill(msg_size)

    if mode is Mode.SPIN_STREAM and msg_size > max_payload:
        expected = packets_in(msg_size, max_payload)
    else:
        expected = 1
    state = {"got": 0, "done": None}

    def pong_in(t, rec):
        state["got"] += 1
        if state["got"] == expected:
            state["done"] = t

    origin.nic.me_append(MatchEntry(match_bits=PONG, host_region=(back, msg_size),
                                    persistent=True, on_complete=pong_in, name="pong"))

    me = MatchEntry(match_bits=PING, host_region=(recv, msg_size), name="ping")
    if mode is Mode.RDMA:
        rdma_receive(responder, me, lambda t: rdma_post(
            responder, t, 0, host_offset=recv, length=msg_size, match_bits=PONG))
    elif mode is Mode.PORTALS4:
        me.counter = Counter("ping")
        triggered_put(responder, me.counter, 1, 0, host_offset=recv, length=msg_size,
                      match_bits=PONG)
    else:
        me.program = pong_program(mode, msg_size, max_payload, setup)
    responder.nic.me_append(me)

    rdma_post(origin, 0, 1, host_offset=src, length=msg_size, match_bits=PING)
    cl.run()
    if state["done"] is None:
        raise incomplete(cl, f"ping-pong {mode.value} {msg_size} B")
    if origin.host.memory.read(back, msg_size) != data:
        raise RuntimeError("pong payload differs from ping payload")
    rtt = state["done"]
    return RunReport.from_cluster(
        cl, "pingpong", mode.value, latency_ps=rtt, payload_bytes=2 * msg_size,
        sweep_param="msg_size", sweep_value=msg_size,
        extra={"half_rtt_ps": rtt // 2, "packets_per_message": packets_in(msg_size, mtu)})
