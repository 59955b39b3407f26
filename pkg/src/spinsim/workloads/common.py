"""Shared setup for the benchmark drivers."""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Optional

from ..cluster import Cluster
from ..host import HostParams
from ..network import NetworkParams
from ..nic import DmaParams, NicParams, NiLimits


class Mode(str, Enum):
    RDMA = "rdma"
    PORTALS4 = "portals4"
    SPIN_STORE = "spin_store"
    SPIN_STREAM = "spin_stream"

    @property
    def is_spin(self) -> bool:
        return self in (Mode.SPIN_STORE, Mode.SPIN_STREAM)


class UnsupportedMode(ValueError):
    pass


class IncompleteRun(RuntimeError):
    """A workload finished its event queue without completing."""


def incomplete(cluster, what: str) -> IncompleteRun:
    if cluster.stats.flow_control_events:
        return IncompleteRun(f"{what}: flow control dropped {cluster.stats.packets_dropped} "
                             f"packets (no retransmission is modeled); raise nic.flow_queue_depth")
    return IncompleteRun(f"{what} never completed")


# Handler cost defaults per workload, in HPU cycles at 2.5 GHz.
DEFAULT_COSTS = {
    "pingpong": {"base_cycles": 20, "cycles_per_byte": 0},
    "accumulate": {"base_cycles": 30, "cycles_per_byte": "0.125"},
    "broadcast": {"base_cycles": 20, "cycles_per_byte": 0},
    "datatype": {"base_cycles": 40, "cycles_per_byte": 0, "segment_cycles": 30},
    "raid": {"base_cycles": 30, "cycles_per_byte": "0.125", "spin_cycles": 10},
    "matching": {"base_cycles": 30, "cycles_per_byte": 0},
    "train": {"base_cycles": 0, "cycles_per_byte": 0},
}


@dataclass
class Setup:
    """Everything besides the workload parameters that determines a run."""

    profile: str = "discrete"
    network: NetworkParams = field(default_factory=NetworkParams)
    nic: NicParams = field(default_factory=NicParams)
    dma: Optional[DmaParams] = None
    host: HostParams = field(default_factory=HostParams)
    limits: Optional[NiLimits] = None
    costs: dict = field(default_factory=dict)
    seed: int = 0
    trace: bool = False
    permute_packets: bool = False

    def dma_params(self) -> DmaParams:
        return self.dma if self.dma is not None else DmaParams.for_profile(self.profile)

    def cluster(self, num_nodes: int) -> Cluster:
        return Cluster(num_nodes, network=self.network, nic=self.nic, dma=self.dma_params(),
                       host=self.host, limits=self.limits, seed=self.seed, trace=self.trace,
                       permute_packets=self.permute_packets)

    def cost(self, workload: str, key: str) -> Fraction:
        table = {**DEFAULT_COSTS[workload], **self.costs.get(workload, {})}
        return Fraction(str(table[key]))

    def with_(self, **kw) -> "Setup":
        return replace(self, **kw)


def pattern(nbytes: int, seed: int, salt: int = 0) -> bytes:
    return random.Random(seed * 1_000_003 + salt).randbytes(nbytes)


def as_mode(mode) -> Mode:
    try:
        return Mode(mode)
    except ValueError:
        raise UnsupportedMode(f"unknown mode {mode!r}") from None


def xor_bytes(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, "little") ^ int.from_bytes(b, "little")).to_bytes(len(a), "little")
