"""A set of nodes on one fat tree sharing a single event engine."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .core import DEFAULT_EVENT_BUDGET, Engine
from .host import Host, HostParams
from .network import FatTree, NetworkParams, path_latency
from .nic import DmaParams, NiLimits, Nic, NicParams

TRACE_COLUMNS = ("time_ps", "node", "unit", "event", "msg_id", "pkt_index", "detail")


class Tracer:
    """In-memory event trace; rows are appended in dispatch order."""

    def __init__(self, enabled: bool = False):
        self.enabled = enabled
        self.rows: list[tuple] = []

    def record(self, time: int, node: int, unit: str, event: str, msg_id: int = -1,
               pkt_index: int = -1, detail: str = ""):
        self.rows.append((time, node, unit, event, msg_id, pkt_index, detail))


@dataclass
class Stats:
    num_nodes: int
    num_hpus: int
    packets_sent: int = 0
    packets_delivered: int = 0
    packets_dropped: int = 0
    flow_control_events: int = 0
    messages_completed: int = 0
    handler_counts: dict = field(default_factory=lambda: {"header": 0, "payload": 0, "completion": 0})
    host_reads: list = field(default_factory=list)
    host_writes: list = field(default_factory=list)
    hpu_busy_ps: list = field(default_factory=list)

    def __post_init__(self):
        self.host_reads = [0] * self.num_nodes
        self.host_writes = [0] * self.num_nodes
        self.hpu_busy_ps = [0] * self.num_hpus


class Node:
    def __init__(self, cluster: "Cluster", node_id: int):
        self.node_id = node_id
        self.host = Host(cluster, node_id, cluster.host_params)
        self.nic = Nic(cluster, node_id, cluster.nic_params, cluster.dma, cluster.limits)


class Cluster:
    def __init__(self, num_nodes: int, network: Optional[NetworkParams] = None,
                 nic: Optional[NicParams] = None, dma: Optional[DmaParams] = None,
                 host: Optional[HostParams] = None, limits: Optional[NiLimits] = None,
                 seed: int = 0, trace: bool = False, permute_packets: bool = False,
                 event_budget: int = DEFAULT_EVENT_BUDGET):
        self.network = network or NetworkParams()
        self.nic_params = nic or NicParams()
        self.dma = dma or DmaParams.discrete()
        self.host_params = host or HostParams()
        self.limits = limits or NiLimits(max_payload_size=self.network.mtu)
        self.limits.validate(self.network.mtu)
        self.engine = Engine(event_budget)
        self.topology = FatTree(num_nodes, self.network.switch_radix)
        self.stats = Stats(num_nodes, self.nic_params.num_hpus)
        self.tracer = Tracer(trace)
        self.rng = random.Random(seed)
        self.permute_packets = permute_packets
        self._msg_ids = 0
        self._handle_ids = 0
        self._latency: dict[tuple[int, int], int] = {}
        self.nodes = [Node(self, i) for i in range(num_nodes)]

    @property
    def now(self) -> int:
        return self.engine.now

    def new_msg_id(self) -> int:
        self._msg_ids += 1
        return self._msg_ids

    def new_handle_id(self) -> int:
        self._handle_ids += 1
        return self._handle_ids

    def latency(self, src: int, dst: int) -> int:
        key = (src, dst)
        lat = self._latency.get(key)
        if lat is None:
            lat = self._latency[key] = path_latency(src, dst, self.network, self.topology)
        return lat

    def account_host(self, node: int, read: int, write: int, source: str):
        if not (read or write):
            return
        self.stats.host_reads[node] += read
        self.stats.host_writes[node] += write
        if self.tracer.enabled:
            self.tracer.record(self.engine.now, node, "host", "HostMem", -1, -1,
                               f"read={read};write={write};by={source}")

    def run(self) -> int:
        return self.engine.run_until_idle()
