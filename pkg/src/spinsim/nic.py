"""The sPIN NIC: matching, HPU scheduling, DMA, send queue and flow control.

Receive path per packet: the serial matcher charges 30 ns for a header
packet (full match-list walk, installs a CAM channel) and 2 ns for any
other packet. The message state keyed by the channel then decides, based
on the matched entry and the header handler's return code, whether the
packet is deposited by DMA, handed to a payload handler or discarded.

Send path: messages are timed analytically when enqueued. Host-sourced
payloads are fetched by DMA over the node's memory port; a packet leaves
when both its data and the wire are ready and then holds the wire for
``max(g, G*len)``.
"""

from __future__ import annotations

import inspect
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Callable, Optional

from .baselines import Counter
from .core import EventKind, Unit, as_rate, checked_add
from .handlers import (
    RETURN_TYPES, YIELD, Charge, CompletionReturn, Handle, HandlerKind, HandlerProgram,
    HandlerTooLarge, HandlerUsageError, HeaderReturn, HeaderView, HostRegion, HpuMemory,
    LengthExceedsMtu, LimitExceeded, OutOfHpuMemory, PayloadReturn, PayloadView,
    SegmentationViolation, Wait, Yield,
)
from .network import HeaderFields, Packet, RequestType, packetize


@dataclass(frozen=True)
class NicParams:
    num_hpus: int = 4
    hpu_clock_ps_per_cycle: int = 400
    match_header: int = 30_000
    match_cam: int = 2_000
    hpu_mem_bytes: int = 1 << 20
    hpu_mem_access_cycles: int = 1
    flow_queue_depth: int = 16
    cam_channels: Optional[int] = None
    # NIC-side cost of firing a counter-triggered operation
    trigger_delay: int = 30_000

    def __post_init__(self):
        if self.num_hpus < 1:
            raise ValueError("num_hpus must be >= 1")
        for name in ("hpu_clock_ps_per_cycle", "match_header", "match_cam", "hpu_mem_bytes",
                     "hpu_mem_access_cycles", "trigger_delay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.flow_queue_depth < 0:
            raise ValueError("flow_queue_depth must be >= 0")
        if self.cam_channels is not None and self.cam_channels < 1:
            raise ValueError("cam_channels must be >= 1 or null")


class DmaProfile(str, Enum):
    DISCRETE = "discrete"
    INTEGRATED = "integrated"


@dataclass(frozen=True)
class DmaParams:
    latency: int = 250_000
    g_per_byte: Fraction = Fraction("15.6")
    profile: DmaProfile = DmaProfile.DISCRETE

    def __post_init__(self):
        object.__setattr__(self, "g_per_byte", as_rate(self.g_per_byte))
        object.__setattr__(self, "profile", DmaProfile(self.profile))
        if self.latency < 0 or self.g_per_byte < 0:
            raise ValueError("DMA latency and g_per_byte must be >= 0")

    @classmethod
    def discrete(cls) -> "DmaParams":
        return cls(250_000, Fraction("15.6"), DmaProfile.DISCRETE)

    @classmethod
    def integrated(cls) -> "DmaParams":
        return cls(50_000, Fraction("6.7"), DmaProfile.INTEGRATED)

    @classmethod
    def for_profile(cls, profile) -> "DmaParams":
        if DmaProfile(profile) is DmaProfile.DISCRETE:
            return cls.discrete()
        return cls.integrated()

    def transfer_time(self, nbytes: int) -> int:
        return self.latency + math.ceil(nbytes * self.g_per_byte)


@dataclass(frozen=True)
class NiLimits:
    max_user_hdr_size: int = 64
    max_payload_size: int = 4096
    max_handler_mem: int = 64 * 1024
    max_initial_state: int = 4096
    min_fragmentation_limit: int = 64
    max_cycles_per_byte: int = 8

    def validate(self, mtu: int):
        if self.max_payload_size > mtu:
            raise ValueError(f"max_payload_size {self.max_payload_size} exceeds mtu {mtu}")
        if self.min_fragmentation_limit < 1 or mtu % self.min_fragmentation_limit:
            raise ValueError("min_fragmentation_limit must divide the mtu")
        if self.max_user_hdr_size % self.min_fragmentation_limit:
            raise ValueError("max_user_hdr_size must be a multiple of min_fragmentation_limit")


@dataclass(eq=False)
class MatchEntry:
    """A receive descriptor: masked match bits, memory and optional handlers."""

    match_bits: int = 0
    ignore_bits: int = 0
    host_region: tuple[int, int] = (0, 0)
    handler_host_region: tuple[int, int] = (0, 0)
    program: Optional[HandlerProgram] = None
    hpu_memory: Optional[HpuMemory] = None
    initial_state: Optional[bytes] = None
    portal_index: int = 0
    persistent: bool = False
    counter: Optional[Counter] = None
    on_complete: Optional[Callable[[int, "MessageRecord"], None]] = field(default=None, repr=False)
    name: str = ""
    # runtime state
    linked: bool = False
    initialized: bool = False
    events: list = field(default_factory=list, repr=False)

    @property
    def header_handler(self):
        return self.program.header if self.program else None

    @property
    def payload_handler(self):
        return self.program.payload if self.program else None

    @property
    def completion_handler(self):
        return self.program.completion if self.program else None

    def matches(self, hdr: HeaderFields) -> bool:
        care = ~self.ignore_bits & 0xFFFF_FFFF_FFFF_FFFF
        return (self.linked and hdr.portal_index == self.portal_index
                and (hdr.match_bits ^ self.match_bits) & care == 0)


@dataclass
class MessageRecord:
    """What the host (or a completion callback) learns about a finished message."""

    msg_id: int
    source: int
    op: RequestType
    length: int
    match_bits: int
    hdr_data: int
    offset: int
    delivered: int = 0
    dropped: int = 0
    flow_control_triggered: bool = False
    header_code: Any = None
    completion_code: Any = None
    error: Any = None
    buffer_offset: Optional[int] = None
    user_hdr: bytes = b""
    time: int = 0


@dataclass(eq=False)
class Message:
    msg_id: int
    src: int
    dst: int
    op: RequestType
    length: int
    data: bytes
    match_bits: int = 0
    remote_offset: int = 0
    hdr_data: int = 0
    portal_index: int = 0
    from_host: bool = False
    get_length: int = 0
    reply: Optional["ReplySink"] = None
    sent: Optional[Handle] = None
    header: Optional[HeaderFields] = None


@dataclass(eq=False)
class ReplySink:
    """Where the data of a get lands on the requesting node."""

    host_offset: int
    length: int
    on_done: Callable[[int], None]
    npkts: int = 0
    settled: int = 0
    dmas: int = 0


class Mode(Enum):
    HANDLERS = "handlers"
    DEPOSIT = "deposit"
    UNEXPECTED = "unexpected"
    DISCARD = "discard"


class _Hpu:
    __slots__ = ("index", "busy", "since", "busy_ps", "resume")

    def __init__(self, index: int):
        self.index = index
        self.busy = False
        self.since = 0
        self.busy_ps = 0
        self.resume: deque = deque()


class _Thread:
    __slots__ = ("kind", "rx", "fn", "args", "nbytes", "gen", "hpu", "portal", "pkt", "chunk")

    def __init__(self, kind, rx, fn, args, nbytes, pkt=None, chunk=0):
        self.kind = kind
        self.rx = rx
        self.fn = fn
        self.args = args
        self.nbytes = nbytes
        self.gen = None
        self.hpu = None
        self.portal = rx.portal
        self.pkt = pkt
        self.chunk = chunk


class _RxMessage:
    """Receive-side state of one message, reachable through its CAM channel."""

    def __init__(self, nic: "Nic", msg: Message, me: Optional[MatchEntry], mode: Mode):
        self.nic = nic
        self.msg = msg
        self.me = me
        self.mode = mode
        self.portal = msg.header.portal_index
        self.npkts = len(packetize(msg.length, nic.cluster.network.mtu))
        self.program = me.program if (me is not None and mode is Mode.HANDLERS) else None
        self.uh = self.program.user_hdr_size if self.program else 0
        self.view: Optional[HeaderView] = None
        self.header_done = self.program is None or self.program.header is None
        self.header_code = None
        self.completion_code = None
        self.waiting: list[Packet] = []
        self.seen = 0
        self.settled = 0
        self.busy = 0
        self.delivered = 0
        self.dropped = 0
        self.fc = False
        self.error = None
        self.phase = "data"
        self.buffer_offset = None

    # -- packet intake ----------------------------------------------------

    def packet(self, pkt: Packet):
        nic = self.nic
        self.seen += 1
        if self.mode is Mode.DISCARD or (self.portal in nic.disabled and self.mode is not Mode.UNEXPECTED):
            self.fc = self.fc or self.portal in nic.disabled
            nic._drop(pkt, "flow_control" if self.portal in nic.disabled else "discard")
            self._discard(pkt.len)
            return
        if pkt.is_header and self.program is not None:
            self.view = _header_view(self.msg, pkt, self.uh)
            if self.program.header is not None:
                th = _Thread(HandlerKind.HEADER, self, self.program.header, (self.view,), 0)
                if not nic._spawn(th, exempt=False):
                    nic._drop(pkt, "flow_control")
                    self.fc = True
                    self.header_code = HeaderReturn.DROP
                    self.header_done = True
                    self._discard(pkt.len)
                    self.check()
                    return
                self.busy += 1
                nic._delivered(pkt)
                self.waiting.append(pkt)
                return
        nic._delivered(pkt)
        if not self.header_done:
            if not nic._admit_wait(self.portal):
                nic._undeliver(pkt, "flow_control")
                self.fc = True
                self._discard(pkt.len)
                return
            self.waiting.append(pkt)
            return
        self._data(pkt, exempt=False)

    def _discard(self, nbytes: int):
        self.dropped += nbytes
        self.settled += 1
        self.check()

    def _data(self, pkt: Packet, exempt: bool):
        """Handle the payload bytes of ``pkt`` once header processing is over."""
        nic = self.nic
        if self.mode is Mode.UNEXPECTED:
            self._deposit(self.buffer_offset + pkt.offset, pkt.data)
            return
        if self.mode is Mode.DEPOSIT:
            self._deposit_me(pkt.offset, pkt.data)
            return
        action = self.header_code.action if self.header_code is not None else "process"
        if action == "drop":
            self._discard(pkt.len)
            return
        if action == "proceed":
            self._deposit_me(pkt.offset, pkt.data)
            return
        lo = max(pkt.offset, self.uh)
        hi = pkt.offset + pkt.len
        consumed = min(hi, self.uh) - pkt.offset if pkt.offset < self.uh else 0
        self.delivered += consumed
        if hi <= lo:
            self.settled += 1
            self.check()
            return
        data = pkt.data[lo - pkt.offset:]
        if self.program.payload is None:
            self._deposit_me(lo - self.uh, data)
            return
        view = PayloadView(len(data), lo - self.uh, data)
        th = _Thread(HandlerKind.PAYLOAD, self, self.program.payload, (view,), len(data),
                     pkt=pkt, chunk=len(data))
        if not nic._spawn(th, exempt=exempt):
            nic._undeliver(pkt, "flow_control")
            self.fc = True
            self.delivered -= consumed
            self._discard(pkt.len)
            return
        self.busy += 1

    def _deposit_me(self, offset: int, data: bytes):
        start, length = self.me.host_region
        off = self.msg.header.offset + offset
        keep = max(0, min(len(data), length - off))
        if keep < len(data):
            self.dropped += len(data) - keep
        if keep:
            self._deposit(start + off, data[:keep], count=False)
            self.delivered += keep
        else:
            self.settled += 1
            self.check()

    def _deposit(self, host_off: int, data: bytes, count: bool = True):
        if count:
            self.delivered += len(data)
        self.settled += 1
        if not data:
            self.check()
            return
        self.nic._dma(self, "to_host", host_off, len(data), data=data)

    # -- handler results --------------------------------------------------

    def handler_done(self, th: _Thread, code):
        self.busy -= 1
        if code.is_error:
            self._error(th.kind, code)
        if th.kind is HandlerKind.HEADER:
            self.header_code = code
            self.header_done = True
            waiting, self.waiting = self.waiting, []
            nic = self.nic
            for pkt in waiting:
                if not pkt.is_header:
                    nic.queued[self.portal] -= 1
                self._data(pkt, exempt=True)
        elif th.kind is HandlerKind.PAYLOAD:
            if code is PayloadReturn.SUCCESS:
                self.delivered += th.chunk
            else:
                self.dropped += th.chunk
            self.settled += 1
        else:
            self.completion_code = code
        self.check()

    def _error(self, kind: HandlerKind, code):
        if self.error is None:
            self.error = (kind.value, code.value)
            if self.me is not None:
                self.me.events.append(("error", self.msg.msg_id, kind.value, code.value))
            self.nic._trace(Unit.HPU, "HandlerError", self.msg.msg_id, -1,
                            f"kind={kind.value};code={code.value}")

    def check(self):
        if self.phase == "done" or self.busy or not self.header_done:
            return
        if self.settled < self.npkts:
            return
        if self.phase == "data":
            self.phase = "settled"
            prog = self.program
            proceed = self.header_code is not None and self.header_code.action == "proceed"
            if prog is not None and prog.completion is not None and not proceed:
                th = _Thread(HandlerKind.COMPLETION, self, prog.completion,
                             (self.dropped, self.fc), 0)
                self.busy += 1
                self.nic._spawn(th, exempt=True)
                return
        self.phase = "done"
        self.nic._finalize(self)

    def record(self) -> MessageRecord:
        h = self.msg.header
        return MessageRecord(
            self.msg.msg_id, h.source_id, h.type, h.length, h.match_bits, h.hdr_data, h.offset,
            self.delivered, self.dropped, self.fc, self.header_code, self.completion_code,
            self.error, self.buffer_offset, self.msg.data[:64], self.nic.now)


def _header_view(msg: Message, pkt: Packet, uh: int) -> HeaderView:
    h = msg.header
    return HeaderView(h.type, h.length, h.target_id, h.source_id, h.match_bits, h.offset,
                      h.hdr_data, bytes(pkt.data[:uh]))


class HpuContext:
    """Per-invocation view a handler gets: identity, state and the action set.

    Methods returning :class:`Wait` (or :class:`Charge`) must be ``yield``ed
    from a generator handler to take effect; ``*_nb`` methods start work and
    return a :class:`Handle` immediately.
    """

    def __init__(self, nic: "Nic", thread: _Thread, hpu_index: int):
        self._nic = nic
        self._th = thread
        self.hpu_index = hpu_index
        self.num_hpus = nic.params.num_hpus
        self.me = thread.rx.me
        self.state = self.me.hpu_memory
        self.header = thread.rx.view
        self.dma_bytes_read = 0
        self.dma_bytes_written = 0

    @property
    def now(self) -> int:
        return self._nic.now

    @property
    def node_id(self) -> int:
        return self._nic.node_id

    # -- time -------------------------------------------------------------

    def charge(self, cycles) -> Charge:
        cycles = Fraction(str(cycles)) if isinstance(cycles, float) else Fraction(cycles)
        return Charge(math.ceil(cycles * self._nic.params.hpu_clock_ps_per_cycle))

    def yield_(self) -> Yield:
        return YIELD

    # -- host memory ------------------------------------------------------

    def _host(self, offset: int, n: int, where) -> int:
        region = self.me.host_region if HostRegion(where) is HostRegion.ME else self.me.handler_host_region
        start, length = region
        if offset < 0 or n < 0 or offset + n > length:
            raise SegmentationViolation(
                f"host access [{offset}, {offset + n}) outside {HostRegion(where).value} region of {length} B")
        return start + offset

    def dma_to_host_nb(self, data: bytes, offset: int, where=HostRegion.ME,
                       handle: Optional[Handle] = None) -> Handle:
        addr = self._host(offset, len(data), where)
        self.dma_bytes_written += len(data)
        return self._nic._dma(self._th.rx, "to_host", addr, len(data), data=bytes(data), handle=handle)

    def dma_to_host(self, data: bytes, offset: int, where=HostRegion.ME) -> Wait:
        return Wait(self.dma_to_host_nb(data, offset, where))

    def dma_from_host_nb(self, offset: int, n: int, where=HostRegion.ME,
                         handle: Optional[Handle] = None) -> Handle:
        addr = self._host(offset, n, where)
        self.dma_bytes_read += n
        return self._nic._dma(self._th.rx, "from_host", addr, n, handle=handle)

    def dma_from_host(self, offset: int, n: int, where=HostRegion.ME) -> Wait:
        return Wait(self.dma_from_host_nb(offset, n, where))

    def dma_test(self, handle: Handle) -> bool:
        return handle.done

    def dma_wait(self, handle: Handle) -> Wait:
        return Wait(handle)

    def dma_cas_nb(self, offset: int, cmp: int, swap: int, where=HostRegion.ME,
                   handle: Optional[Handle] = None) -> Handle:
        """Result is ``(swapped, old_value)``; ``old_value`` plays the role of the overwritten cmp slot."""
        addr = self._host(offset, 8, where)
        mem = self._nic.host.memory

        def op():
            old = int.from_bytes(mem.read(addr, 8), "little")
            if old == cmp:
                mem.write(addr, (swap & 0xFFFF_FFFF_FFFF_FFFF).to_bytes(8, "little"))
                return True, old
            return False, old
        return self._nic._dma(self._th.rx, "atomic", addr, 8, atomic=op, handle=handle)

    def dma_cas(self, offset: int, cmp: int, swap: int, where=HostRegion.ME) -> Wait:
        return Wait(self.dma_cas_nb(offset, cmp, swap, where))

    def dma_fetch_add_nb(self, offset: int, inc: int, where=HostRegion.ME,
                         handle: Optional[Handle] = None) -> Handle:
        addr = self._host(offset, 8, where)
        mem = self._nic.host.memory

        def op():
            old = int.from_bytes(mem.read(addr, 8), "little")
            mem.write(addr, ((old + inc) & 0xFFFF_FFFF_FFFF_FFFF).to_bytes(8, "little"))
            return old
        return self._nic._dma(self._th.rx, "atomic", addr, 8, atomic=op, handle=handle)

    def dma_fetch_add(self, offset: int, inc: int, where=HostRegion.ME) -> Wait:
        return Wait(self.dma_fetch_add_nb(offset, inc, where))

    # -- messages ---------------------------------------------------------

    def put_from_device(self, data: bytes, target: int, match_bits: int = 0,
                        remote_offset: int = 0, hdr_data: int = 0, portal_index: int = 0) -> Wait:
        """Single-packet put straight from NIC memory; yield the result to block until it left."""
        limit = self._nic.limits.max_payload_size
        if len(data) > limit:
            raise LengthExceedsMtu(f"{len(data)} B exceeds max_payload_size {limit}")
        msg = self._nic.put_device(target, bytes(data), match_bits=match_bits,
                                   remote_offset=remote_offset, hdr_data=hdr_data,
                                   portal_index=portal_index)
        return Wait(msg.sent)

    def put_from_host(self, offset: int, length: int, target: int, match_bits: int = 0,
                      remote_offset: int = 0, hdr_data: int = 0, portal_index: int = 0,
                      where=HostRegion.ME) -> Message:
        addr = self._host(offset, length, where)
        return self._nic.put(target, host_offset=addr, length=length, match_bits=match_bits,
                             remote_offset=remote_offset, hdr_data=hdr_data,
                             portal_index=portal_index)

    def get(self, target: int, match_bits: int, length: int, remote_offset: int = 0,
            local_offset: int = 0, portal_index: int = 0) -> Message:
        """Fetch ``length`` bytes from a descriptor at ``target`` into this ME's host region.

        The ME completes (event, counter, callback) once the reply has landed.
        """
        addr = self._host(local_offset, length, HostRegion.ME)
        nic, me = self._nic, self.me
        sink = ReplySink(addr, length, lambda t: nic._complete_me(me, nic._reply_record(me, length)))
        return nic.get(target, match_bits=match_bits, length=length, sink=sink,
                       remote_offset=remote_offset, portal_index=portal_index)

    # -- HPU-local atomics and counters -----------------------------------

    def cas(self, offset: int, cmp: int, swap: int) -> bool:
        if self.state.read_u64(offset) == (cmp & 0xFFFF_FFFF_FFFF_FFFF):
            self.state.write_u64(offset, swap)
            return True
        return False

    def fadd(self, offset: int, inc: int) -> int:
        old = self.state.read_u64(offset)
        self.state.write_u64(offset, old + inc)
        return old

    def _counter(self) -> Counter:
        if self.me.counter is None:
            raise HandlerUsageError("no counter attached to this match entry")
        return self.me.counter

    def ct_inc(self, delta: int = 1) -> int:
        return self._counter().inc(delta)

    def ct_get(self) -> int:
        return self._counter().get()

    def ct_set(self, value: int):
        self._counter().set(value)


class Nic:
    def __init__(self, cluster, node_id: int, params: NicParams, dma: DmaParams,
                 limits: NiLimits):
        self.cluster = cluster
        self.node_id = node_id
        self.params = params
        self.dma = dma
        self.limits = limits
        self.engine = cluster.engine
        self.hpus = [_Hpu(i) for i in range(params.num_hpus)]
        self.ready: deque[_Thread] = deque()
        self.queued: dict[int, int] = {}
        self.match_list: list[MatchEntry] = []
        self.channels: dict[int, _RxMessage] = {}
        self.disabled: set[int] = set()
        self.matcher_free = 0
        self.wire_free = 0
        self.hpu_mem_used = 0
        self._next_block = 1
        self.unexpected: list[MessageRecord] = []
        self.unexpected_listeners: list[Callable[[MessageRecord], None]] = []
        self.track_occupancy = False
        self.occupancy: list[tuple[int, int, bool]] = []

    @property
    def now(self) -> int:
        return self.engine.now

    @property
    def host(self):
        return self.cluster.nodes[self.node_id].host

    def _trace(self, unit, event: str, msg_id=-1, pkt=-1, detail="", hpu=None):
        tr = self.cluster.tracer
        if tr.enabled:
            label = f"hpu{hpu}" if unit is Unit.HPU and hpu is not None else unit.value
            tr.record(self.now, self.node_id, label, event, msg_id, pkt, detail)

    # -- HPU memory and match list ----------------------------------------

    def alloc_hpu_mem(self, length: int) -> HpuMemory:
        if length < 0 or length > self.limits.max_handler_mem:
            raise LimitExceeded(f"HPU allocation of {length} B exceeds max_handler_mem "
                                f"{self.limits.max_handler_mem}")
        if self.hpu_mem_used + length > self.params.hpu_mem_bytes:
            raise OutOfHpuMemory(f"{length} B requested, "
                                 f"{self.params.hpu_mem_bytes - self.hpu_mem_used} B free")
        self.hpu_mem_used += length
        block = HpuMemory(length, self._next_block)
        self._next_block += 1
        return block

    def free_hpu_mem(self, block: HpuMemory):
        if block.freed:
            raise HandlerUsageError("HPU memory block freed twice")
        block.freed = True
        self.hpu_mem_used -= block.length

    def me_append(self, me: MatchEntry) -> MatchEntry:
        lim = self.limits
        prog = me.program
        if prog is not None:
            if prog.code_bytes > lim.max_handler_mem:
                raise HandlerTooLarge(f"handler code of {prog.code_bytes} B exceeds "
                                      f"{lim.max_handler_mem} B")
            if prog.cycles_per_byte > lim.max_cycles_per_byte:
                raise LimitExceeded(f"cycles_per_byte {prog.cycles_per_byte} exceeds "
                                    f"{lim.max_cycles_per_byte}")
            if prog.user_hdr_size > lim.max_user_hdr_size:
                raise LimitExceeded(f"user header of {prog.user_hdr_size} B exceeds "
                                    f"{lim.max_user_hdr_size} B")
            if prog.user_hdr_size % lim.min_fragmentation_limit:
                raise LimitExceeded("user_hdr_size must be a multiple of min_fragmentation_limit")
            if me.hpu_memory is None:
                me.hpu_memory = self.alloc_hpu_mem(len(me.initial_state or b""))
        if me.initial_state is not None:
            if len(me.initial_state) > lim.max_initial_state:
                raise LimitExceeded(f"initial state of {len(me.initial_state)} B exceeds "
                                    f"{lim.max_initial_state} B")
            if me.hpu_memory is None or len(me.initial_state) > me.hpu_memory.length:
                raise LimitExceeded("initial state larger than the attached HPU memory")
        me.linked = True
        self.match_list.append(me)
        return me

    def me_unlink(self, me: MatchEntry):
        if me.linked:
            me.linked = False
            self.match_list.remove(me)

    def _find_me(self, hdr: HeaderFields) -> Optional[MatchEntry]:
        for me in self.match_list:
            if me.matches(hdr):
                return me
        return None

    def take_unexpected(self, match_bits: int, ignore_bits: int = 0) -> Optional[MessageRecord]:
        """Host-side search of the unexpected list (oldest first)."""
        care = ~ignore_bits & 0xFFFF_FFFF_FFFF_FFFF
        for i, rec in enumerate(self.unexpected):
            if (rec.match_bits ^ match_bits) & care == 0:
                return self.unexpected.pop(i)
        return None

    # -- flow control -----------------------------------------------------

    def trigger_flow_control(self, portal_index: int):
        if portal_index in self.disabled:
            return
        self.disabled.add(portal_index)
        self.cluster.stats.flow_control_events += 1
        self._trace(Unit.NIC_MATCHER, EventKind.FLOW_CONTROL_ON.value, detail=f"portal={portal_index}")
        for rx in self.channels.values():
            if rx.portal == portal_index:
                rx.fc = True

    def reenable_portal(self, portal_index: int):
        if portal_index in self.disabled:
            self.disabled.discard(portal_index)
            self._trace(Unit.NIC_MATCHER, EventKind.FLOW_CONTROL_OFF.value,
                        detail=f"portal={portal_index}")

    def _admit_wait(self, portal: int) -> bool:
        if self._idle_hpu() is None and self.queued.get(portal, 0) >= self.params.flow_queue_depth:
            self.trigger_flow_control(portal)
            return False
        self.queued[portal] = self.queued.get(portal, 0) + 1
        self._sample()
        return True

    def _sample(self, arrival: bool = True):
        # (time, packets waiting for an HPU, whether a packet just arrived)
        if self.track_occupancy:
            self.occupancy.append((self.now, sum(self.queued.values()), arrival))

    # -- send path --------------------------------------------------------

    def _new_message(self, target: int, op: RequestType, length: int, data: bytes, **kw) -> Message:
        msg = Message(self.cluster.new_msg_id(), self.node_id, target, op, length, data, **kw)
        msg.header = HeaderFields(op, length, self.node_id, target, msg.match_bits,
                                  msg.remote_offset, msg.hdr_data, msg.portal_index)
        return msg

    def put(self, target: int, *, host_offset: int, length: int, match_bits: int = 0,
            remote_offset: int = 0, hdr_data: int = 0, portal_index: int = 0) -> Message:
        """Put from host memory, issued by the NIC now (payload fetched by DMA)."""
        data = self.host.memory.read(host_offset, length)
        msg = self._new_message(target, RequestType.PUT, length, data, match_bits=match_bits,
                                remote_offset=remote_offset, hdr_data=hdr_data,
                                portal_index=portal_index, from_host=True)
        self._transmit(msg)
        return msg

    def put_device(self, target: int, data: bytes, *, match_bits: int = 0, remote_offset: int = 0,
                   hdr_data: int = 0, portal_index: int = 0) -> Message:
        msg = self._new_message(target, RequestType.PUT, len(data), data, match_bits=match_bits,
                                remote_offset=remote_offset, hdr_data=hdr_data,
                                portal_index=portal_index)
        msg.sent = Handle(self.cluster.new_handle_id())
        self._transmit(msg)
        return msg

    def get(self, target: int, *, match_bits: int, length: int, sink: ReplySink,
            remote_offset: int = 0, portal_index: int = 0) -> Message:
        msg = self._new_message(target, RequestType.GET, 0, b"", match_bits=match_bits,
                                remote_offset=remote_offset, portal_index=portal_index,
                                get_length=length, reply=sink)
        self._transmit(msg)
        return msg

    def _transmit(self, msg: Message):
        cl = self.cluster
        mtu = cl.network.mtu
        t = self.now
        chunks = packetize(msg.length, mtu)
        order = list(range(len(chunks)))
        if cl.permute_packets and len(order) > 2:
            tail = order[1:]
            cl.rng.shuffle(tail)
            order = [0] + tail
        ready = {}
        if msg.from_host and msg.length:
            port = self.host.port
            for k in order:
                ready[k] = port.reserve(t, chunks[k][1], self.dma.latency, self.dma.g_per_byte)[1]
            cl.account_host(self.node_id, msg.length, 0, "dma_tx")
        self._trace(Unit.WIRE, EventKind.SEND_READY.value, msg.msg_id, -1,
                    f"dst={msg.dst};op={msg.op.value};len={msg.length};npkts={len(chunks)}")
        lat = cl.latency(self.node_id, msg.dst)
        dst_nic = cl.nodes[msg.dst].nic
        cur = max(t, self.wire_free)
        net = cl.network
        for k in order:
            off, ln = chunks[k]
            start = max(cur, ready.get(k, t))
            cur = checked_add(start, net.packet_gap(ln))
            pkt = Packet(msg.msg_id, k, off, ln, k == 0, msg.header, msg.data[off:off + ln], msg)
            cl.stats.packets_sent += 1
            self._trace(Unit.WIRE, "PacketSend", msg.msg_id, k, f"dst={msg.dst};len={ln};depart={cur}")
            self.engine.at(cur + lat, lambda p=pkt: dst_nic._arrive(p), node=msg.dst,
                           unit=Unit.WIRE, kind=EventKind.PACKET_ARRIVE)
        self.wire_free = cur
        if msg.sent is not None:
            h = msg.sent
            self.engine.at(cur, lambda: self._complete_handle(h, None), node=self.node_id,
                           unit=Unit.WIRE)

    # -- receive path -----------------------------------------------------

    def _arrive(self, pkt: Packet):
        self._trace(Unit.WIRE, EventKind.PACKET_ARRIVE.value, pkt.msg_id, pkt.pkt_index,
                    f"len={pkt.len}")
        full = pkt.is_header and pkt.message.op is not RequestType.REPLY
        cost = self.params.match_header if full else self.params.match_cam
        self.matcher_free = checked_add(max(self.now, self.matcher_free), cost)
        self.engine.at(self.matcher_free, lambda: self._matched(pkt), node=self.node_id,
                       unit=Unit.NIC_MATCHER)

    def _delivered(self, pkt: Packet):
        self.cluster.stats.packets_delivered += 1
        self._trace(Unit.NIC_MATCHER, "PacketAccept", pkt.msg_id, pkt.pkt_index, f"len={pkt.len}")

    def _drop(self, pkt: Packet, reason: str):
        self.cluster.stats.packets_dropped += 1
        self._trace(Unit.NIC_MATCHER, "PacketDrop", pkt.msg_id, pkt.pkt_index,
                    f"len={pkt.len};reason={reason}")

    def _undeliver(self, pkt: Packet, reason: str):
        self.cluster.stats.packets_delivered -= 1
        self._trace(Unit.NIC_MATCHER, "PacketReject", pkt.msg_id, pkt.pkt_index, f"len={pkt.len}")
        self._drop(pkt, reason)

    def _matched(self, pkt: Packet):
        msg = pkt.message
        if msg.op is RequestType.REPLY:
            self._reply_packet(pkt)
            return
        if pkt.is_header:
            if msg.op is RequestType.GET:
                self._serve_get(pkt)
                return
            rx = self._open(msg)
        else:
            rx = self.channels[pkt.msg_id]
        rx.packet(pkt)

    def _open(self, msg: Message) -> _RxMessage:
        hdr = msg.header
        limit = self.params.cam_channels
        if hdr.portal_index in self.disabled or (limit is not None and len(self.channels) >= limit):
            rx = _RxMessage(self, msg, None, Mode.DISCARD)
        else:
            me = self._find_me(hdr)
            if me is None:
                rx = _RxMessage(self, msg, None, Mode.UNEXPECTED)
                rx.buffer_offset = self.host.memory.alloc(msg.length)
            elif me.program is not None:
                rx = _RxMessage(self, msg, me, Mode.HANDLERS)
                if not me.initialized:
                    me.initialized = True
                    if me.initial_state is not None:
                        me.hpu_memory.load(me.initial_state)
            else:
                rx = _RxMessage(self, msg, me, Mode.DEPOSIT)
        self.channels[msg.msg_id] = rx
        return rx

    def _serve_get(self, pkt: Packet):
        msg = pkt.message
        me = self._find_me(msg.header)
        if me is None:
            self._drop(pkt, "no_match")
            return
        self._delivered(pkt)
        start, length = me.host_region
        off = msg.header.offset
        n = max(0, min(msg.get_length, length - off))
        data = self.host.memory.read(start + off, n)
        reply = self._new_message(msg.src, RequestType.REPLY, n, data, from_host=True,
                                  reply=msg.reply)
        self._transmit(reply)
        rec = MessageRecord(msg.msg_id, msg.src, RequestType.GET, n, msg.match_bits, 0, off,
                            delivered=n, time=self.now)
        self.engine.at(self.wire_free, lambda: self._complete_me(me, rec), node=self.node_id,
                       unit=Unit.WIRE)

    def _reply_packet(self, pkt: Packet):
        sink = pkt.message.reply
        self._delivered(pkt)
        if sink.npkts == 0:
            sink.npkts = len(packetize(pkt.message.length, self.cluster.network.mtu))
        sink.settled += 1
        if pkt.len:
            self._dma(None, "to_host", sink.host_offset + pkt.offset, pkt.len, data=pkt.data,
                      sink=sink)
        else:
            self._sink_check(sink)

    def _sink_check(self, sink: ReplySink):
        if sink.settled == sink.npkts and sink.dmas == 0:
            self._trace(Unit.DMA_ENGINE, EventKind.COMPLETION.value, -1, -1,
                        f"reply_len={sink.length}")
            sink.settled = -1
            sink.on_done(self.now)

    def _reply_record(self, me: MatchEntry, length: int) -> MessageRecord:
        return MessageRecord(-1, self.node_id, RequestType.REPLY, length, me.match_bits, 0, 0,
                             delivered=length, time=self.now)

    def _finalize(self, rx: _RxMessage):
        del self.channels[rx.msg.msg_id]
        rec = rx.record()
        pending = any(c is not None and c.pending for c in (rx.header_code, rx.completion_code))
        self._trace(Unit.NIC_MATCHER, EventKind.COMPLETION.value, rx.msg.msg_id, -1,
                    f"delivered={rx.delivered};dropped={rx.dropped};fc={int(rx.fc)};"
                    f"pending={int(pending)}")
        if rx.mode is Mode.UNEXPECTED:
            self.unexpected.append(rec)
            for cb in list(self.unexpected_listeners):
                cb(rec)
        elif rx.me is not None and not pending:
            self._complete_me(rx.me, rec)

    def _complete_me(self, me: MatchEntry, rec: MessageRecord):
        self.cluster.stats.messages_completed += 1
        me.events.append(("complete", rec))
        if not me.persistent:
            self.me_unlink(me)
        if me.counter is not None:
            me.counter.inc(1)
        if me.on_complete is not None:
            me.on_complete(self.now, rec)

    # -- HPU scheduling ---------------------------------------------------

    def _idle_hpu(self) -> Optional[_Hpu]:
        for h in self.hpus:
            if not h.busy and not h.resume:
                return h
        return None

    def _spawn(self, th: _Thread, exempt: bool) -> bool:
        hpu = self._idle_hpu() if not self.ready else None
        if hpu is not None:
            self._start(th, hpu)
            self._sample()
            return True
        q = self.queued.get(th.portal, 0)
        if not exempt and q >= self.params.flow_queue_depth:
            self.trigger_flow_control(th.portal)
            return False
        self.queued[th.portal] = q + 1
        self.ready.append(th)
        self._sample()
        return True

    def _occupy(self, hpu: _Hpu):
        hpu.busy = True
        hpu.since = self.now

    def _start(self, th: _Thread, hpu: _Hpu):
        self._occupy(hpu)
        th.hpu = hpu.index
        self.cluster.stats.handler_counts[th.kind.value] += 1
        self._trace(Unit.HPU, EventKind.HANDLER_START.value, th.rx.msg.msg_id,
                    th.pkt.pkt_index if th.pkt is not None else -1, f"kind={th.kind.value}",
                    hpu=hpu.index)
        prog = th.rx.program
        cycles = prog.invocation_cycles(th.nbytes, self.params.hpu_mem_access_cycles)
        cost = math.ceil(cycles * self.params.hpu_clock_ps_per_cycle)
        self.engine.after(cost, lambda: self._begin(th), node=self.node_id, unit=Unit.HPU,
                          kind=EventKind.TIMER, hpu=hpu.index)

    def _begin(self, th: _Thread):
        ctx = HpuContext(self, th, th.hpu)
        try:
            res = th.fn(ctx, *th.args, ctx.state)
        except SegmentationViolation:
            self._finish(th, RETURN_TYPES[th.kind].SEGV)
            return
        except (HandlerUsageError, LimitExceeded):
            self._finish(th, RETURN_TYPES[th.kind].FAIL)
            return
        if inspect.isgenerator(res):
            th.gen = res
            self._step(th, None)
        else:
            self._finish(th, res)

    def _step(self, th: _Thread, value):
        gen = th.gen
        while True:
            try:
                req = gen.send(value)
            except StopIteration as stop:
                self._finish(th, stop.value)
                return
            except SegmentationViolation:
                self._finish(th, RETURN_TYPES[th.kind].SEGV)
                return
            except (HandlerUsageError, LimitExceeded):
                self._finish(th, RETURN_TYPES[th.kind].FAIL)
                return
            if isinstance(req, Charge):
                if req.ps > 0:
                    self.engine.after(req.ps, lambda: self._step(th, None), node=self.node_id,
                                      unit=Unit.HPU, hpu=th.hpu)
                    return
                value = None
            elif isinstance(req, (Wait, Handle)):
                h = req.handle if isinstance(req, Wait) else req
                if h.done:
                    value = h.result
                    continue
                h.waiters.append(th)
                self._release(self.hpus[th.hpu])
                return
            elif isinstance(req, Yield):
                # hand the HPU to a thread waiting to resume on it, if any
                hpu = self.hpus[th.hpu]
                if hpu.resume:
                    hpu.resume.append((th, None))
                    self._release(hpu)
                    return
                value = None
            else:
                gen.close()
                self._finish(th, RETURN_TYPES[th.kind].FAIL)
                return

    def _finish(self, th: _Thread, code):
        rtype = RETURN_TYPES[th.kind]
        if code is None:
            code = {HandlerKind.HEADER: HeaderReturn.PROCESS_DATA,
                    HandlerKind.PAYLOAD: PayloadReturn.SUCCESS,
                    HandlerKind.COMPLETION: CompletionReturn.SUCCESS}[th.kind]
        elif not isinstance(code, rtype):
            code = rtype.FAIL
        self._trace(Unit.HPU, EventKind.HANDLER_END.value, th.rx.msg.msg_id,
                    th.pkt.pkt_index if th.pkt is not None else -1,
                    f"kind={th.kind.value};code={code.value}", hpu=th.hpu)
        self._release(self.hpus[th.hpu])
        th.rx.handler_done(th, code)

    def _release(self, hpu: _Hpu):
        busy = self.now - hpu.since
        hpu.busy_ps += busy
        self.cluster.stats.hpu_busy_ps[hpu.index] += busy
        self._trace(Unit.HPU, "HpuRelease", -1, -1, f"busy={busy}", hpu=hpu.index)
        hpu.busy = False
        if hpu.resume:
            th, value = hpu.resume.popleft()
            self._occupy(hpu)
            self.engine.at(self.now, lambda: self._step(th, value), node=self.node_id,
                           unit=Unit.HPU, hpu=hpu.index)
        elif self.ready:
            th = self.ready.popleft()
            self.queued[th.portal] -= 1
            self._start(th, hpu)
            self._sample(arrival=False)

    def _wake(self, th: _Thread, value):
        hpu = self.hpus[th.hpu]
        if hpu.busy:
            hpu.resume.append((th, value))
            return
        self._occupy(hpu)
        self._step(th, value)

    # -- DMA engine -------------------------------------------------------

    def _dma(self, rx: Optional[_RxMessage], direction: str, host_off: int, nbytes: int,
             data: Optional[bytes] = None, handle: Optional[Handle] = None,
             atomic: Optional[Callable[[], Any]] = None, sink: Optional[ReplySink] = None) -> Handle:
        if handle is None:
            handle = Handle(self.cluster.new_handle_id())
        elif not handle.done:
            raise HandlerUsageError(f"DMA handle {handle.id} reused before completion")
        else:
            handle.done = False
            handle.result = None
            handle.complete_time = None
        host = self.host
        if direction == "to_host":
            host.memory._check(host_off, nbytes)
        elif direction == "from_host":
            host.memory._check(host_off, nbytes)
        _start, done = host.port.reserve(self.now, nbytes, self.dma.latency, self.dma.g_per_byte)
        reads = nbytes if direction in ("from_host", "atomic") else 0
        writes = nbytes if direction in ("to_host", "atomic") else 0
        self.cluster.account_host(self.node_id, reads, writes, "dma")
        if rx is not None:
            rx.busy += 1
        if sink is not None:
            sink.dmas += 1

        def complete():
            if direction == "to_host":
                host.memory.write(host_off, data)
            elif direction == "from_host":
                handle.result = host.memory.read(host_off, nbytes)
            else:
                handle.result = atomic()
            self._trace(Unit.DMA_ENGINE, EventKind.DMA_COMPLETE.value, -1, -1,
                        f"dir={direction};bytes={nbytes}")
            self._complete_handle(handle, handle.result)
            if rx is not None:
                rx.busy -= 1
                rx.check()
            if sink is not None:
                sink.dmas -= 1
                self._sink_check(sink)

        self.engine.at(done, complete, node=self.node_id, unit=Unit.DMA_ENGINE,
                       kind=EventKind.DMA_COMPLETE)
        return handle

    def _complete_handle(self, handle: Handle, result):
        handle.done = True
        handle.result = result
        handle.complete_time = self.now
        waiters, handle.waiters = handle.waiters, []
        for th in waiters:
            self._wake(th, result)
        for cb in handle.callbacks:
            cb(handle)
