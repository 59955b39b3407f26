"""Handler programming surface: return codes, packet views, HPU memory.

A handler program bundles up to three Python callables::

    header(ctx, header: HeaderView, state) -> HeaderReturn
    payload(ctx, payload: PayloadView, state) -> PayloadReturn
    completion(ctx, dropped_bytes, flow_control_triggered, state) -> CompletionReturn

A handler that needs to block (DMA, waiting on a put, charging compute
time) is written as a generator and ``yield``s the request objects the
context hands out; the value of the ``yield`` expression is the request's
result::

    def payload(ctx, p, state):
        old = yield ctx.dma_from_host(p.offset, p.length)
        ...
        return PayloadReturn.SUCCESS

Every ``yield`` is an interleaving point with other handler instances.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Any, Callable, Optional

from .network import RequestType


class SegmentationViolation(Exception):
    """Out-of-bounds access from handler code; reported as a SEGV return."""


class HandlerUsageError(Exception):
    """API misuse inside a handler (e.g. reusing a live DMA handle); reported as FAIL."""


class OutOfHpuMemory(MemoryError):
    pass


class LimitExceeded(ValueError):
    pass


class HandlerTooLarge(LimitExceeded):
    pass


class LengthExceedsMtu(LimitExceeded):
    pass


class HandlerKind(str, Enum):
    HEADER = "header"
    PAYLOAD = "payload"
    COMPLETION = "completion"


class HeaderReturn(Enum):
    DROP = "DROP"
    DROP_PENDING = "DROP_PENDING"
    PROCESS_DATA = "PROCESS_DATA"
    PROCESS_DATA_PENDING = "PROCESS_DATA_PENDING"
    PROCEED = "PROCEED"
    PROCEED_PENDING = "PROCEED_PENDING"
    SEGV = "SEGV"
    FAIL = "FAIL"

    @property
    def pending(self) -> bool:
        return self.value.endswith("_PENDING")

    @property
    def is_error(self) -> bool:
        return self in (HeaderReturn.SEGV, HeaderReturn.FAIL)

    @property
    def action(self) -> str:
        """``drop``, ``process`` or ``proceed``; errors behave like ``drop``."""
        if self.is_error or self.value.startswith("DROP"):
            return "drop"
        if self.value.startswith("PROCESS"):
            return "process"
        return "proceed"


class PayloadReturn(Enum):
    DROP = "DROP"
    SUCCESS = "SUCCESS"
    FAIL = "FAIL"
    SEGV = "SEGV"

    pending = False

    @property
    def is_error(self) -> bool:
        return self in (PayloadReturn.SEGV, PayloadReturn.FAIL)


class CompletionReturn(Enum):
    SUCCESS = "SUCCESS"
    SUCCESS_PENDING = "SUCCESS_PENDING"
    FAIL = "FAIL"
    SEGV = "SEGV"

    @property
    def pending(self) -> bool:
        return self is CompletionReturn.SUCCESS_PENDING

    @property
    def is_error(self) -> bool:
        return self in (CompletionReturn.SEGV, CompletionReturn.FAIL)


RETURN_TYPES = {
    HandlerKind.HEADER: HeaderReturn,
    HandlerKind.PAYLOAD: PayloadReturn,
    HandlerKind.COMPLETION: CompletionReturn,
}


class HostRegion(str, Enum):
    ME = "me"            # PTL_ME_HOST_MEM
    HANDLER = "handler"  # PTL_HANDLER_HOST_MEM


@dataclass(frozen=True)
class HeaderView:
    type: RequestType
    length: int
    target_id: int
    source_id: int
    match_bits: int
    offset: int
    hdr_data: int
    user_hdr: bytes = b""

    def user_u64(self, index: int) -> int:
        """Little-endian 64-bit field ``index`` of the user header."""
        lo = 8 * index
        if index < 0 or lo + 8 > len(self.user_hdr):
            raise SegmentationViolation(f"user header field {index} outside {len(self.user_hdr)} B")
        return struct.unpack_from("<Q", self.user_hdr, lo)[0]


@dataclass(frozen=True)
class PayloadView:
    length: int
    offset: int
    data: bytes


def pack_user_header(*fields: int, size: int = 64) -> bytes:
    raw = struct.pack(f"<{len(fields)}Q", *fields)
    if len(raw) > size:
        raise LimitExceeded(f"{len(fields)} fields do not fit in a {size} B user header")
    return raw.ljust(size, b"\0")


@dataclass
class HandlerProgram:
    header: Optional[Callable[..., Any]] = None
    payload: Optional[Callable[..., Any]] = None
    completion: Optional[Callable[..., Any]] = None
    base_cycles: Fraction = Fraction(0)
    cycles_per_byte: Fraction = Fraction(0)
    user_hdr_size: int = 0
    code_bytes: int = 0
    name: str = ""

    def __post_init__(self):
        self.base_cycles = Fraction(str(self.base_cycles)) if not isinstance(
            self.base_cycles, (int, Fraction)) else Fraction(self.base_cycles)
        self.cycles_per_byte = Fraction(str(self.cycles_per_byte)) if not isinstance(
            self.cycles_per_byte, (int, Fraction)) else Fraction(self.cycles_per_byte)

    def handler(self, kind: HandlerKind):
        return getattr(self, kind.value)

    def invocation_cycles(self, nbytes: int, access_cycles: int = 1) -> Fraction:
        return self.base_cycles + self.cycles_per_byte * nbytes * access_cycles


class HpuMemory:
    """A zero-initialized block of NIC-local handler memory.

    All accessors bounds-check and raise :class:`SegmentationViolation`;
    once freed, every access faults.
    """

    _U64 = struct.Struct("<Q")

    def __init__(self, length: int, handle: int = 0):
        self.handle = handle
        self.length = length
        self._buf = bytearray(length)
        self.freed = False

    def __len__(self):
        return self.length

    def _check(self, offset: int, n: int):
        if self.freed:
            raise SegmentationViolation(f"HPU memory block {self.handle} used after free")
        if offset < 0 or n < 0 or offset + n > self.length:
            raise SegmentationViolation(
                f"access [{offset}, {offset + n}) outside HPU block of {self.length} B")

    def read(self, offset: int, n: int) -> bytes:
        self._check(offset, n)
        return bytes(self._buf[offset:offset + n])

    def write(self, offset: int, data: bytes):
        self._check(offset, len(data))
        self._buf[offset:offset + len(data)] = data

    def read_u64(self, offset: int) -> int:
        self._check_word(offset)
        return self._U64.unpack_from(self._buf, offset)[0]

    def write_u64(self, offset: int, value: int):
        self._check_word(offset)
        self._U64.pack_into(self._buf, offset, value & 0xFFFF_FFFF_FFFF_FFFF)

    def _check_word(self, offset: int):
        if offset % 8:
            raise SegmentationViolation(f"unaligned 64-bit access at {offset}")
        self._check(offset, 8)

    def load(self, data: bytes):
        """Overwrite the head of the block with an initial state image."""
        self._check(0, len(data))
        self._buf[:len(data)] = data
        self._buf[len(data):] = bytes(self.length - len(data))


# Requests a generator handler yields back to the runtime.

@dataclass(frozen=True)
class Charge:
    ps: int


@dataclass(frozen=True)
class Wait:
    handle: "Handle"


class Yield:
    pass


YIELD = Yield()


class Handle:
    """Completion handle for DMA and device puts."""

    __slots__ = ("id", "done", "result", "waiters", "callbacks", "complete_time")

    def __init__(self, hid: int):
        self.id = hid
        self.done = False
        self.result = None
        self.waiters: list = []
        self.callbacks: list = []
        self.complete_time: Optional[int] = None

    def __repr__(self):
        return f"Handle({self.id}, done={self.done})"
