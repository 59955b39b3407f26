from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from spinsim.core import (
    MAX_TIME, Engine, EventLimitExceeded, SchedulingInPast, SimTimeOverflow, bytes_time,
    checked_add, ns, us,
)


def test_unit_conversions():
    assert ns(1) == 1_000
    assert ns("116.8") == 116_800
    assert us("1.5") == 1_500_000
    with pytest.raises(ValueError):
        ns("0.0001")


def test_bytes_time_rounds_up():
    assert bytes_time(8, Fraction("15.6")) == 125  # 124.8 ps
    assert bytes_time(4096, 20) == 81_920
    assert bytes_time(0, Fraction("6.7")) == 0


def test_events_fire_in_time_then_insertion_order():
    eng = Engine()
    seen = []
    eng.at(50, lambda: seen.append("b"))
    eng.at(10, lambda: seen.append("a"))
    eng.at(50, lambda: seen.append("c"))
    eng.at(50, lambda: eng.at(50, lambda: seen.append("d")))
    assert eng.run_until_idle() == 50
    assert seen == ["a", "b", "c", "d"]


def test_scheduling_in_the_past_is_rejected():
    eng = Engine()
    eng.at(100, lambda: eng.at(99, lambda: None))
    with pytest.raises(SchedulingInPast):
        eng.run_until_idle()


def test_time_overflow_and_event_budget():
    with pytest.raises(SimTimeOverflow):
        checked_add(MAX_TIME, 1)
    eng = Engine(event_budget=3)

    def again():
        eng.after(1, again)
    eng.at(0, again)
    with pytest.raises(EventLimitExceeded):
        eng.run_until_idle()


def test_empty_engine_reports_zero():
    assert Engine().run_until_idle() == 0


@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=60))
def test_dispatch_order_is_sorted_and_stable(times):
    eng = Engine()
    out = []
    for i, t in enumerate(times):
        eng.at(t, lambda i=i, t=t: out.append((t, i)))
    eng.run_until_idle()
    assert out == sorted(out)
