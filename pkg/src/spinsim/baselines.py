"""RDMA and Portals 4 execution models.

Portals 4 offloads reactions through counters and pre-posted triggered
operations; RDMA reacts on the host CPU (poll, match, post).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .network import RequestType


class Counter:
    """A Portals counting event with attached triggered operations."""

    def __init__(self, name: str = ""):
        self.name = name
        self.value = 0
        self._ops: list[TriggeredOp] = []

    def get(self) -> int:
        return self.value

    def set(self, value: int):
        self.value = value
        self._fire()

    def inc(self, delta: int = 1) -> int:
        self.value += delta
        self._fire()
        return self.value

    def attach(self, op: "TriggeredOp") -> "TriggeredOp":
        op.counter = self
        self._ops.append(op)
        # stable sort keeps posting order among equal thresholds
        self._ops.sort(key=lambda o: o.threshold)
        self._fire()
        return op

    @property
    def armed(self) -> int:
        return sum(1 for op in self._ops if not op.fired)

    def _fire(self):
        for op in self._ops:
            if op.threshold > self.value:
                break
            if not op.fired:
                op.fired = True
                op.fire()


@dataclass(eq=False)
class TriggeredOp:
    op: RequestType
    threshold: int
    fire: Callable[[], None] = field(repr=False)
    counter: Optional[Counter] = field(default=None, repr=False)
    fired: bool = False


def triggered_put(node, counter: Counter, threshold: int, target: int, *, host_offset: int,
                  length: int, match_bits: int = 0, remote_offset: int = 0,
                  hdr_data: int = 0, portal_index: int = 0) -> TriggeredOp:
    """Pre-post a put from host memory that the NIC issues when ``counter`` reaches ``threshold``.

    Firing costs the NIC ``trigger_delay``; the payload is then fetched by
    DMA exactly as for a host-posted put, without the CPU overhead ``o``.
    """
    nic = node.nic

    def fire():
        def go():
            nic.put(target, host_offset=host_offset, length=length, match_bits=match_bits,
                    remote_offset=remote_offset, hdr_data=hdr_data, portal_index=portal_index)
        nic.cluster.engine.after(nic.params.trigger_delay, go, node=nic.node_id)

    return counter.attach(TriggeredOp(RequestType.PUT, threshold, fire))


def rdma_receive(node, me, on_ready: Callable[[int], None]):
    """Host reaction to a completed RDMA receive.

    The CPU sees the completion entry only after the whole message is in
    host memory, spends ``cpu_reaction`` polling and matching, then calls
    ``on_ready(t)`` at the time it is ready to post.
    """
    host = node.host

    def completed(t, _record):
        host.react(t, lambda: on_ready(host.cluster.engine.now))

    me.on_complete = completed
    return me


def rdma_post(node, t: int, target: int, **kw):
    """Host posts a put: ``o`` on the CPU, then the NIC fetches the payload by DMA."""
    return node.host.post(t, lambda _t: node.nic.put(target, **kw))
