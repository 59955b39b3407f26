import pytest
from hypothesis import given, strategies as st

from spinsim.network import (
    FatTree, NetworkParams, UnknownNode, UnknownPath, inject_message, packetize, packets_in,
    path_latency,
)

NET = NetworkParams()


def test_defaults_are_the_loggp_parameters():
    assert (NET.o, NET.g, NET.G_per_byte, NET.mtu) == (65_000, 6_700, 20, 4096)
    assert NET.crossover_bytes == 335
    assert NET.line_rate == 50 * 10**9


def test_path_latency_by_distance():
    assert path_latency(0, 1, NET) == 116_800
    assert path_latency(0, 18, NET) == 3 * 50_000 + 4 * 33_400
    assert path_latency(0, 18 * 18, NET) == 5 * 50_000 + 6 * 33_400


def test_fat_tree_bounds():
    t = FatTree.full(36)
    assert t.capacity == t.num_hosts == 11_664
    with pytest.raises(UnknownPath):
        t.switch_hops(3, 3)
    with pytest.raises(UnknownNode):
        t.switch_hops(0, 11_664)
    with pytest.raises(ValueError):
        FatTree(10, radix=5)


def test_packet_gap_regimes():
    assert NET.packet_gap(0) == NET.g
    assert NET.packet_gap(335) == NET.g
    assert NET.packet_gap(336) == 336 * 20
    assert NET.packet_gap(4096) == 81_920


def test_zero_length_message_is_one_header_packet():
    assert packetize(0, 4096) == [(0, 0)]
    assert packets_in(0, 4096) == 1


def test_inject_message_timing():
    pk = inject_message(0, 1, 8192 + 8, 0, NET)
    assert [p.len for p in pk] == [4096, 4096, 8]
    assert pk[0].wire_done == NET.o + 81_920
    assert pk[2].wire_done == NET.o + 2 * 81_920 + NET.g
    assert all(p.arrive - p.wire_done == 116_800 for p in pk)


@given(st.integers(0, 100_000), st.integers(1, 9000))
def test_packetize_covers_message_exactly(n, mtu):
    chunks = packetize(n, mtu)
    assert sum(ln for _o, ln in chunks) == n
    assert all(0 < ln <= mtu for _o, ln in chunks) or n == 0
    assert [o for o, _l in chunks] == [i * mtu for i in range(len(chunks))]
    assert len(chunks) == packets_in(n, mtu)


@given(st.integers(0, 11_663), st.integers(0, 11_663))
def test_latency_is_symmetric(a, b):
    if a != b:
        assert path_latency(a, b, NET) == path_latency(b, a, NET)
