"""Deterministic discrete-event engine.

Virtual time is an integer count of picoseconds. Events are dispatched in
strict ``(time, seq)`` order where ``seq`` is the insertion counter, so two
runs with the same inputs dispatch the same events in the same order.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Callable, Optional

MAX_TIME = 2**64 - 1
DEFAULT_EVENT_BUDGET = 10**9

PS_PER_NS = 1_000
PS_PER_US = 1_000_000


class SimulationError(Exception):
    """Base class for errors raised by the simulator itself."""


class SchedulingInPast(SimulationError):
    pass


class EventLimitExceeded(SimulationError):
    pass


class SimTimeOverflow(SimulationError, OverflowError):
    pass


def ns(value) -> int:
    """Nanoseconds to integer picoseconds (exact for decimal literals)."""
    return _to_ps(value, PS_PER_NS)


def us(value) -> int:
    return _to_ps(value, PS_PER_US)


def _to_ps(value, scale: int) -> int:
    ps = Fraction(str(value)) * scale
    if ps.denominator != 1:
        raise ValueError(f"{value} is not representable in whole picoseconds")
    return int(ps)


def as_rate(value) -> Fraction:
    """Normalize a per-byte time (ps/B) to an exact Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(str(value))


def bytes_time(nbytes: int, ps_per_byte) -> int:
    """Time to move ``nbytes`` at ``ps_per_byte``, rounded up to a whole ps."""
    return math.ceil(nbytes * as_rate(ps_per_byte))


def checked_add(*terms: int) -> int:
    total = sum(terms)
    if total < 0 or total > MAX_TIME:
        raise SimTimeOverflow(f"virtual time {total} outside [0, 2^64)")
    return total


class Unit(str, Enum):
    HOST_CPU = "host"
    NIC_MATCHER = "matcher"
    HPU = "hpu"
    DMA_ENGINE = "dma"
    WIRE = "wire"


class EventKind(str, Enum):
    PACKET_ARRIVE = "PacketArrive"
    HANDLER_START = "HandlerStart"
    HANDLER_END = "HandlerEnd"
    DMA_COMPLETE = "DmaComplete"
    SEND_READY = "SendReady"
    FLOW_CONTROL_ON = "FlowControlOn"
    FLOW_CONTROL_OFF = "FlowControlOff"
    COMPLETION = "Completion"
    # internal continuations (handler resumption, host CPU work, triggers)
    TIMER = "Timer"


@dataclass(eq=False)
class Event:
    time: int
    node: int = -1
    unit: Unit = Unit.WIRE
    kind: EventKind = EventKind.TIMER
    payload: Any = None
    action: Optional[Callable[[], None]] = field(default=None, repr=False)
    hpu: Optional[int] = None
    seq: Optional[int] = None

    def unit_label(self) -> str:
        if self.unit is Unit.HPU and self.hpu is not None:
            return f"hpu{self.hpu}"
        return self.unit.value


class Engine:
    """Single-threaded event loop over a ``(time, seq)`` priority queue."""

    def __init__(self, event_budget: int = DEFAULT_EVENT_BUDGET, log_events: bool = False):
        self.now = 0
        self.event_budget = event_budget
        self.dispatched = 0
        self._queue: list[tuple[int, int, Event]] = []
        self._next_seq = 0
        self.log: Optional[list[tuple[int, int, int, str, str]]] = [] if log_events else None

    def schedule(self, event: Event) -> Event:
        if event.time < self.now:
            raise SchedulingInPast(f"event at {event.time} ps scheduled at now={self.now} ps")
        if event.time > MAX_TIME:
            raise SimTimeOverflow(f"event time {event.time} exceeds 64-bit range")
        if event.seq is not None:
            raise SimulationError("event already scheduled")
        event.seq = self._next_seq
        self._next_seq += 1
        heapq.heappush(self._queue, (event.time, event.seq, event))
        return event

    def at(self, time: int, action: Callable[[], None], *, node: int = -1,
           unit: Unit = Unit.WIRE, kind: EventKind = EventKind.TIMER,
           payload: Any = None, hpu: Optional[int] = None) -> Event:
        return self.schedule(Event(time, node, unit, kind, payload, action, hpu))

    def after(self, delay: int, action: Callable[[], None], **kw) -> Event:
        return self.at(checked_add(self.now, delay), action, **kw)

    def pending(self) -> int:
        return len(self._queue)

    def step(self) -> Event:
        time, _seq, event = heapq.heappop(self._queue)
        self.dispatched += 1
        if self.dispatched > self.event_budget:
            raise EventLimitExceeded(
                f"event budget of {self.event_budget} exhausted at t={time} ps")
        self.now = time
        if self.log is not None:
            self.log.append((time, event.seq, event.node, event.unit_label(), event.kind.value))
        if event.action is not None:
            event.action()
        return event

    def run_until_idle(self) -> int:
        """Drain the queue; returns the time of the last dispatched event (0 if none)."""
        last = 0 if self.dispatched == 0 else self.now
        while self._queue:
            last = self.step().time
        return last
