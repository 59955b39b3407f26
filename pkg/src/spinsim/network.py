"""LogGP network parameters, packetization and fat-tree latency."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

from .core import as_rate, bytes_time, checked_add


class UnknownNode(ValueError):
    pass


class UnknownPath(UnknownNode):
    """Raised for ``src == dst``; loopback never reaches the fabric."""


@dataclass(frozen=True)
class NetworkParams:
    o: int = 65_000
    g: int = 6_700
    G_per_byte: Fraction = Fraction(20)
    switch_delay: int = 50_000
    wire_delay: int = 33_400
    mtu: int = 4096
    switch_radix: int = 36

    def __post_init__(self):
        object.__setattr__(self, "G_per_byte", as_rate(self.G_per_byte))
        for name in ("o", "g", "switch_delay", "wire_delay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.G_per_byte < 0:
            raise ValueError("G_per_byte must be >= 0")
        if self.mtu < 1:
            raise ValueError("mtu must be >= 1")
        if self.switch_radix < 4 or self.switch_radix % 2:
            raise ValueError("switch_radix must be even and >= 4")

    def packet_gap(self, nbytes: int) -> int:
        """Time a packet of ``nbytes`` occupies the injection link."""
        return max(self.g, bytes_time(nbytes, self.G_per_byte))

    @property
    def crossover_bytes(self) -> Fraction:
        # packet size at which the per-byte term catches up with g
        return Fraction(self.g) / self.G_per_byte

    @property
    def line_rate(self) -> Fraction:
        """Bytes per second at the bandwidth limit."""
        return Fraction(10**12) / self.G_per_byte


class RequestType(str, Enum):
    PUT = "put"
    GET = "get"
    ATOMIC = "atomic"
    REPLY = "reply"  # data returned for a get


@dataclass(frozen=True)
class HeaderFields:
    type: RequestType
    length: int
    source_id: int
    target_id: int
    match_bits: int = 0
    offset: int = 0
    hdr_data: int = 0
    portal_index: int = 0


@dataclass(eq=False)
class Packet:
    msg_id: int
    pkt_index: int
    offset: int
    len: int
    is_header: bool
    header: Optional[HeaderFields] = None
    data: bytes = b""
    message: object = field(default=None, repr=False)


def packetize(msg_len: int, mtu: int) -> list[tuple[int, int]]:
    """Split a payload into ``(offset, len)`` chunks of at most ``mtu`` bytes."""
    if msg_len < 0 or mtu < 1:
        raise ValueError("msg_len must be >= 0 and mtu >= 1")
    if msg_len == 0:
        return [(0, 0)]
    return [(off, min(mtu, msg_len - off)) for off in range(0, msg_len, mtu)]


class FatTree:
    """Three-level full-bisection fat tree built from ``radix``-port switches.

    ``radix/2`` hosts hang off each leaf, a pod holds ``radix/2`` leaves and
    the tree holds ``radix`` pods.
    """

    def __init__(self, num_hosts: int, radix: int = 36):
        if radix < 4 or radix % 2:
            raise ValueError("radix must be even and >= 4")
        self.radix = radix
        self.hosts_per_leaf = radix // 2
        self.hosts_per_pod = self.hosts_per_leaf * (radix // 2)
        self.capacity = self.hosts_per_pod * radix
        if not 0 < num_hosts <= self.capacity:
            raise ValueError(f"fat tree of radix {radix} holds 1..{self.capacity} hosts")
        self.num_hosts = num_hosts

    @classmethod
    def full(cls, radix: int = 36) -> "FatTree":
        return cls((radix // 2) ** 2 * radix, radix)

    def _check(self, node: int):
        if not isinstance(node, int) or not 0 <= node < self.num_hosts:
            raise UnknownNode(f"node {node!r} not in topology of {self.num_hosts} hosts")

    def switch_hops(self, src: int, dst: int) -> int:
        self._check(src)
        self._check(dst)
        if src == dst:
            raise UnknownPath("loopback is not routed through the fabric")
        if src // self.hosts_per_leaf == dst // self.hosts_per_leaf:
            return 1
        if src // self.hosts_per_pod == dst // self.hosts_per_pod:
            return 3
        return 5


def path_latency(src: int, dst: int, params: NetworkParams,
                 topology: Optional[FatTree] = None) -> int:
    topo = topology or FatTree.full(params.switch_radix)
    switches = topo.switch_hops(src, dst)
    return switches * params.switch_delay + (switches + 1) * params.wire_delay


@dataclass(frozen=True)
class PacketTiming:
    pkt_index: int
    offset: int
    len: int
    wire_done: int
    arrive: int


def inject_message(src: int, dst: int, msg_len: int, t_start: int, params: NetworkParams,
                   topology: Optional[FatTree] = None) -> list[PacketTiming]:
    """Wire timing of one message whose payload is already at the NIC.

    The sender pays ``o`` once, then each packet holds the link for
    ``max(g, G*len)``; every packet arrives one path latency later.
    """
    lat = path_latency(src, dst, params, topology)
    t = checked_add(t_start, params.o)
    out = []
    for k, (off, ln) in enumerate(packetize(msg_len, params.mtu)):
        t = checked_add(t, params.packet_gap(ln))
        out.append(PacketTiming(k, off, ln, t, t + lat))
    return out


def packets_in(msg_len: int, mtu: int) -> int:
    return max(1, math.ceil(msg_len / mtu))
