import math

import pytest

from helpers import pair
from spinsim.baselines import Counter, TriggeredOp, triggered_put
from spinsim.host import HostParams
from spinsim.network import NetworkParams, RequestType
from spinsim.nic import DmaParams, MatchEntry, NicParams
from spinsim.workloads.pingpong import run_pingpong

NET, DMA, HOST, NIC = NetworkParams(), DmaParams(), HostParams(), NicParams()


def dma(n):
    return DMA.latency + math.ceil(float(DMA.g_per_byte) * n - 1e-9)


def wire_path():
    # two hosts below one leaf switch
    return 2 * NET.wire_delay + NET.switch_delay


def arrival(n):
    """Host posts at t=0; time the packet's data lands in remote host memory."""
    return NET.o + dma(n) + NET.g + wire_path() + NIC.match_header + dma(n)


def test_counter_fires_each_op_once_in_threshold_order():
    c = Counter("c")
    fired = []
    for name, th in (("b", 2), ("a", 1), ("b2", 2), ("c", 3)):
        c.attach(TriggeredOp(RequestType.PUT, th, lambda n=name: fired.append(n)))
    assert c.armed == 4
    c.inc()
    c.inc()
    c.inc()
    c.inc()
    c.set(10)
    assert fired == ["a", "b", "b2", "c"]
    assert c.armed == 0 and c.get() == 10


def test_attaching_below_current_value_fires_immediately():
    c = Counter()
    c.set(5)
    fired = []
    c.attach(TriggeredOp(RequestType.PUT, 3, lambda: fired.append(1)))
    assert fired == [1]


def test_triggered_put_pays_trigger_delay_but_not_cpu_overhead():
    cl = pair()
    n0, n1 = cl.nodes
    src = n0.host.fill(8, b"12345678")
    dst = n1.host.fill(8)
    done = []
    me = MatchEntry(match_bits=3, host_region=(dst, 8), on_complete=lambda t, rec: done.append(t))
    n1.nic.me_append(me)
    c = Counter()
    triggered_put(n0, c, 1, 1, host_offset=src, length=8, match_bits=3)
    cl.engine.at(1_000_000, lambda: c.inc())
    cl.run()
    assert done == [1_000_000 + NIC.trigger_delay + arrival(8) - NET.o]
    assert n1.host.memory.read(dst, 8) == b"12345678"


def test_rdma_rtt_matches_parameter_oracle():
    rtt = 2 * arrival(8) + HOST.cpu_reaction
    assert rtt == 1_637_500
    assert run_pingpong("rdma", 8).latency_ps == rtt


def test_portals4_rtt_matches_parameter_oracle():
    rtt = arrival(8) + NIC.trigger_delay + arrival(8) - NET.o
    assert rtt == 1_402_500
    assert run_pingpong("portals4", 8).latency_ps == rtt


@pytest.mark.parametrize("mode", ["spin_store", "spin_stream"])
def test_spin_rtt_matches_parameter_oracle(mode):
    # ping reaches the NIC, payload handler answers from the packet buffer
    ping_at_nic = NET.o + dma(8) + NET.g + wire_path() + NIC.match_header
    handler = 20 * NIC.hpu_clock_ps_per_cycle
    rtt = ping_at_nic + handler + NET.g + wire_path() + NIC.match_header + dma(8)
    assert rtt == 880_250
    assert run_pingpong(mode, 8).latency_ps == rtt


def test_zero_byte_messages_skip_payload_dma():
    base = NET.o + NET.g + wire_path() + NIC.match_header
    assert run_pingpong("rdma", 0).latency_ps == 2 * base + HOST.cpu_reaction
    assert run_pingpong("portals4", 0).latency_ps == 2 * base - NET.o + NIC.trigger_delay
