"""Binomial-tree broadcast from rank 0.

In round ``k`` every informed rank ``r < 2**k`` sends to ``r + 2**k``, so
the root fans out to 1, 2, 4, ... and a rank ``r`` receives in round
``bit_length(r) - 1`` from ``r`` with its top bit cleared.
"""

from __future__ import annotations

from typing import Optional

from ..baselines import Counter, rdma_post, rdma_receive, triggered_put
from ..handlers import CompletionReturn, HandlerProgram, PayloadReturn
from ..nic import MatchEntry
from ..report import RunReport
from .common import Mode, Setup, as_mode, incomplete, pattern

BCAST = 4


def binomial_children(rank: int, P: int) -> list[int]:
    k = rank.bit_length()
    out = []
    while rank + (1 << k) < P:
        out.append(rank + (1 << k))
        k += 1
    return out


def binomial_parent(rank: int) -> Optional[int]:
    if rank == 0:
        return None
    return rank - (1 << (rank.bit_length() - 1))


def binomial_rounds(P: int) -> int:
    """Number of rounds, ``ceil(log2 P)``."""
    return (P - 1).bit_length() if P > 1 else 0


def schedule(P: int) -> list[tuple[int, int, int]]:
    """All ``(round, parent, child)`` transfers in round order."""
    out = []
    for child in range(1, P):
        out.append((child.bit_length() - 1, binomial_parent(child), child))
    return sorted(out)


def _forward_stream(children: list[int]):
    def payload(ctx, p, state):
        off = ctx.header.offset + p.offset
        for c in children:
            ctx.put_from_device(p.data, c, match_bits=BCAST, remote_offset=off)
        ctx.dma_to_host_nb(p.data, off)
        return PayloadReturn.SUCCESS
    return payload


def _forward_empty(children: list[int]):
    def completion(ctx, dropped, fc, state):
        if ctx.header.length == 0:
            for c in children:
                ctx.put_from_device(b"", c, match_bits=BCAST)
        return CompletionReturn.SUCCESS
    return completion


def _forward_from_host(children: list[int]):
    def completion(ctx, dropped, fc, state):
        for c in children:
            ctx.put_from_host(0, ctx.header.length, c, match_bits=BCAST)
        return CompletionReturn.SUCCESS
    return completion


def run_broadcast(mode, P: int, msg_size: int, setup: Optional[Setup] = None) -> RunReport:
    mode = as_mode(mode)
    setup = setup or Setup()
    if P < 1 or msg_size < 0:
        raise ValueError("P must be >= 1 and msg_size >= 0")
    cl = setup.cluster(P)
    data = pattern(msg_size, setup.seed)
    bufs = [node.host.fill(msg_size, data if node.node_id == 0 else None) for node in cl.nodes]
    done = [None] * P
    done[0] = 0
    got = [0] * P
    transfers: set[tuple[int, int]] = set()
    max_payload = cl.limits.max_payload_size
    cost = dict(base_cycles=setup.cost("broadcast", "base_cycles"),
                cycles_per_byte=setup.cost("broadcast", "cycles_per_byte"))
    max_triggered = 0

    def mark(rank):
        def cb(t, rec):
            got[rank] += rec.delivered
            if done[rank] is None and (got[rank] >= msg_size):
                done[rank] = t
        return cb

    for node in cl.nodes[1:]:
        r = node.node_id
        kids = binomial_children(r, P)
        transfers.update((r, c) for c in kids)
        me = MatchEntry(match_bits=BCAST, host_region=(bufs[r], msg_size), name=f"bcast{r}")
        if mode is Mode.RDMA:
            def forward(t, node=node, kids=kids, r=r):
                for c in kids:
                    rdma_post(node, t, c, host_offset=bufs[r], length=msg_size, match_bits=BCAST)
            rdma_receive(node, me, forward)
            inner = me.on_complete

            def on_done(t, rec, inner=inner, r=r):
                mark(r)(t, rec)
                inner(t, rec)
            me.on_complete = on_done
        elif mode is Mode.PORTALS4:
            me.counter = Counter(f"bcast{r}")
            for c in kids:
                triggered_put(node, me.counter, 1, c, host_offset=bufs[r], length=msg_size,
                              match_bits=BCAST)
            max_triggered = max(max_triggered, len(kids))
            me.on_complete = mark(r)
        elif mode is Mode.SPIN_STREAM or msg_size <= max_payload:
            # one logical message may arrive as many single-packet pieces
            me.persistent = True
            me.program = HandlerProgram(payload=_forward_stream(kids), completion=_forward_empty(kids),
                                        name="bcast_stream", **cost)
            me.on_complete = mark(r)
        else:
            me.program = HandlerProgram(completion=_forward_from_host(kids), name="bcast_store",
                                        **cost)
            me.on_complete = mark(r)
        node.nic.me_append(me)

    root = cl.nodes[0]
    root_kids = binomial_children(0, P)
    transfers.update((0, c) for c in root_kids)
    for c in root_kids:
        rdma_post(root, 0, c, host_offset=bufs[0], length=msg_size, match_bits=BCAST)
    cl.run()

    if any(d is None for d in done):
        missing = [r for r, d in enumerate(done) if d is None]
        raise incomplete(cl, f"broadcast to ranks {missing[:8]}")
    for node in cl.nodes:
        if node.host.memory.read(bufs[node.node_id], msg_size) != data:
            raise RuntimeError(f"rank {node.node_id} holds corrupted data")
    rounds = max((c - p).bit_length() for p, c in transfers) if transfers else 0
    completion = max(done)
    return RunReport.from_cluster(
        cl, "broadcast", mode.value, latency_ps=completion, payload_bytes=msg_size,
        sweep_param="P", sweep_value=P,
        extra={"messages": len(transfers), "rounds": rounds, "msg_size": msg_size,
               "max_triggered_ops": max_triggered})
