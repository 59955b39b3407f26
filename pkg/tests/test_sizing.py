from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from spinsim import sizing
from spinsim.network import NetworkParams

sizes = st.integers(min_value=1, max_value=4096)


def test_anchor_small_packets():
    # 53 ns handlers, packets up to g/G = 335 B: 53 / 6.7 rounds up to 8
    assert {sizing.hpus_needed(53_000, s) for s in range(1, 336)} == {8}


def test_anchor_full_packets():
    # 4 KiB packets arrive every 81.92 ns; 650 / 81.92 rounds up to 8
    assert sizing.packet_interval(4096) == 81_920
    assert sizing.hpus_needed(650_000, 4096) == 8


def test_crossover_and_rates():
    net = NetworkParams()
    assert net.crossover_bytes == 335
    assert sizing.packet_interval(335) == 6_700
    assert sizing.packet_interval(336) == 6_720
    assert sizing.arrival_rate(1) == Fraction(10**12, 6_700)
    assert abs(float(sizing.arrival_rate(4096)) - 12.5e6) / 12.5e6 < 0.03


def test_buffer_overhead():
    assert sizing.buffer_overhead(Fraction(10**12, 8), 200_000) == 25_000
    assert sizing.buffer_overhead(0, 10**9) == 0
    with pytest.raises(ValueError):
        sizing.buffer_overhead(-1, 5)


def test_input_validation():
    for bad in (0, 4097):
        with pytest.raises(ValueError):
            sizing.packet_interval(bad)
    with pytest.raises(ValueError):
        sizing.hpus_needed(-1, 64)
    with pytest.raises(ValueError):
        sizing.max_handler_time(0, 64)


def test_zero_handler_time_needs_no_hpus():
    assert sizing.hpus_needed(0, 64) == 0


def test_surface_rows():
    rows = sizing.surface([0, 53, 650], [64, 4096])
    assert rows == [(0, 64, 0), (0, 4096, 0), (53, 64, 8), (53, 4096, 1),
                    (650, 64, 98), (650, 4096, 8)]


@given(t=st.integers(min_value=0, max_value=10**7), dt=st.integers(min_value=0, max_value=10**6),
       s=sizes)
def test_hpus_monotone_in_handler_time(t, dt, s):
    assert sizing.hpus_needed(t, s) <= sizing.hpus_needed(t + dt, s)


@given(t=st.integers(min_value=0, max_value=10**7), s=sizes, s2=sizes)
def test_hpus_non_increasing_in_packet_size(t, s, s2):
    lo, hi = sorted((s, s2))
    assert sizing.hpus_needed(t, lo) >= sizing.hpus_needed(t, hi)


@given(n=st.integers(min_value=1, max_value=512), s=sizes)
def test_max_handler_time_inverts_hpus_needed(n, s):
    t = sizing.max_handler_time(n, s)
    assert sizing.hpus_needed(t, s) <= n
    assert sizing.hpus_needed(t + 1, s) > n


def test_worked_examples():
    assert sizing.hpus_needed(200_000, 4096) == 3
    assert sizing.max_handler_time(8, 4096) == 655_360
    assert sizing.max_handler_time(8, 335) == 53_600
    assert sizing.max_handler_time(1, 335) == 6_700
    assert sizing.buffer_overhead(50 * 10**9, 200_000) == 10_000
    assert abs(float(sizing.arrival_rate(335)) / 1e6 - 149.25) < 0.01
