"""Closed-form HPU provisioning from Little's law.

Packets of ``s`` bytes arrive at most every ``max(g, G*s)``; with a mean
handler time ``T`` the NIC needs ``T / max(g, G*s)`` handlers busy at
once to keep up with line rate.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Optional

from .network import NetworkParams

PS_PER_S = 10**12


def _check_size(s: int, params: NetworkParams):
    if not 1 <= s <= params.mtu:
        raise ValueError(f"packet size {s} outside [1, {params.mtu}]")


def packet_interval(s: int, params: Optional[NetworkParams] = None) -> Fraction:
    """Exact minimum spacing (ps) of back-to-back ``s``-byte packets."""
    params = params or NetworkParams()
    _check_size(s, params)
    return max(Fraction(params.g), params.G_per_byte * s)


def arrival_rate(s: int, params: Optional[NetworkParams] = None) -> Fraction:
    """Packets per second at line rate: ``min(1/g, 1/(G*s))``."""
    return PS_PER_S / packet_interval(s, params)


def hpus_needed(t_bar_ps, s: int, params: Optional[NetworkParams] = None) -> int:
    if t_bar_ps < 0:
        raise ValueError("mean handler time must be >= 0")
    return math.ceil(Fraction(t_bar_ps) / packet_interval(s, params))


def max_handler_time(num_hpus: int, s: int, params: Optional[NetworkParams] = None) -> int:
    """Longest mean handler time (ps, rounded down) ``num_hpus`` HPUs sustain at line rate."""
    if num_hpus < 1:
        raise ValueError("num_hpus must be >= 1")
    return math.floor(num_hpus * packet_interval(s, params))


def buffer_overhead(bandwidth_bytes_per_s, delay_ps) -> Fraction:
    """Bytes in flight while a packet waits ``delay_ps`` at ``bandwidth`` B/s."""
    if bandwidth_bytes_per_s < 0 or delay_ps < 0:
        raise ValueError("bandwidth and delay must be >= 0")
    return Fraction(str(bandwidth_bytes_per_s)) * Fraction(delay_ps) / PS_PER_S


def surface(t_values_ns: Iterable, s_values: Iterable[int],
            params: Optional[NetworkParams] = None) -> list[tuple]:
    """Rows ``(T_ns, s_bytes, hpus)`` of the HPU requirement surface."""
    params = params or NetworkParams()
    rows = []
    for t in t_values_ns:
        t_ps = Fraction(str(t)) * 1000
        for s in s_values:
            rows.append((t, s, hpus_needed(t_ps, s, params)))
    return rows


DEFAULT_T_NS = tuple(range(0, 1001, 10))
DEFAULT_S = (1, 8, 16, 32, 64, 128, 256, 335, 512, 1024, 2048, 4096)
