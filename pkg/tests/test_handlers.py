import math

import pytest

from helpers import completions, deliver, pair
from spinsim.baselines import Counter
from spinsim.handlers import (
    CompletionReturn, HandlerProgram, HandlerTooLarge, HandlerUsageError, HeaderReturn, HpuMemory,
    LimitExceeded, OutOfHpuMemory, PayloadReturn, SegmentationViolation, pack_user_header,
)
from spinsim.nic import MatchEntry, NicParams, NiLimits

MSG = bytes(range(256)) * 40  # 10,240 B, three packets


def region(cl, n=len(MSG)):
    return (cl.nodes[1].host.fill(n), n)


def me_with(cl, **prog):
    return MatchEntry(match_bits=7, host_region=region(cl), program=HandlerProgram(**prog))


def test_default_header_processes_payload_without_user_header():
    cl = pair()
    seen = []

    def payload(ctx, p, state):
        seen.append((p.offset, p.length, bytes(p.data)))

    me = me_with(cl, payload=payload, user_hdr_size=64)
    deliver(cl, me, MSG)
    seen.sort()
    assert sum(n for _o, n, _d in seen) == len(MSG) - 64
    assert seen[0][0] == 0 and seen[0][2][:8] == MSG[64:72]
    rec, = completions(me)
    assert rec.delivered == len(MSG) and rec.dropped == 0
    assert cl.stats.handler_counts == {"header": 0, "payload": 3, "completion": 0}


def test_header_view_fields():
    cl = pair()
    got = {}

    def header(ctx, h, state):
        got.update(length=h.length, source=h.source_id, hdr=h.hdr_data, u=h.user_u64(1))
        return HeaderReturn.DROP

    me = me_with(cl, header=header, user_hdr_size=64)
    deliver(cl, me, pack_user_header(11, 22) + MSG[:100], hdr_data=99)
    assert got == {"length": 164, "source": 0, "hdr": 99, "u": 22}


def test_drop_skips_payload_and_runs_completion():
    cl = pair()
    calls = []
    me = me_with(cl, header=lambda ctx, h, s: HeaderReturn.DROP,
                 payload=lambda ctx, p, s: calls.append("payload"),
                 completion=lambda ctx, dropped, fc, s: calls.append(("completion", dropped, fc)))
    deliver(cl, me, MSG)
    assert calls == [("completion", len(MSG), False)]
    assert cl.stats.host_writes[1] == 0
    rec, = completions(me)
    assert rec.dropped == len(MSG) and rec.delivered == 0


def test_proceed_deposits_everything_and_skips_other_handlers():
    cl = pair()
    calls = []
    me = me_with(cl, header=lambda ctx, h, s: HeaderReturn.PROCEED,
                 payload=lambda ctx, p, s: calls.append("p"),
                 completion=lambda ctx, d, fc, s: calls.append("c"), user_hdr_size=64)
    deliver(cl, me, MSG)
    assert calls == []
    start, n = me.host_region
    assert cl.nodes[1].host.memory.read(start, n) == MSG
    assert cl.stats.host_writes[1] == len(MSG)


def test_payload_drop_counts_bytes():
    cl = pair()
    me = me_with(cl, payload=lambda ctx, p, s: PayloadReturn.DROP)
    deliver(cl, me, MSG)
    rec, = completions(me)
    assert rec.dropped == len(MSG)


def test_segv_is_reported_and_message_still_completes():
    cl = pair()

    def payload(ctx, p, state):
        state.read(0, 10**6)

    me = me_with(cl, payload=payload)
    me.hpu_memory = cl.nodes[1].nic.alloc_hpu_mem(64)
    deliver(cl, me, MSG)
    rec, = completions(me)
    assert rec.error == ("payload", "SEGV")
    assert any(e[0] == "error" for e in me.events)


def test_host_access_outside_region_faults():
    cl = pair()
    me = me_with(cl, header=lambda ctx, h, s: ctx.dma_to_host_nb(b"x", 10**7) and None)
    deliver(cl, me, MSG)
    assert completions(me)[0].header_code is HeaderReturn.SEGV


def test_wrong_return_type_and_misuse_map_to_fail():
    cl = pair()
    me = me_with(cl, header=lambda ctx, h, s: PayloadReturn.SUCCESS)
    deliver(cl, me, MSG[:10])
    assert completions(me)[0].header_code is HeaderReturn.FAIL

    cl = pair()

    def reuse(ctx, p, state):
        h = ctx.dma_to_host_nb(p.data, p.offset)
        ctx.dma_to_host_nb(p.data, p.offset, handle=h)

    me = me_with(cl, payload=reuse)
    deliver(cl, me, MSG[:10])
    assert completions(me)[0].error == ("payload", "FAIL")


def test_put_from_device_longer_than_a_packet_fails():
    cl = pair()

    def header(ctx, h, state):
        yield ctx.put_from_device(b"x" * 5000, 0)

    me = me_with(cl, header=header)
    deliver(cl, me, MSG[:10])
    assert completions(me)[0].header_code is HeaderReturn.FAIL


def test_pending_keeps_me_linked():
    cl = pair()
    me = me_with(cl, header=lambda ctx, h, s: HeaderReturn.PROCESS_DATA_PENDING)
    deliver(cl, me, MSG[:100])
    assert me.linked and completions(me) == []
    deliver(cl, None, MSG[:100], match_bits=7)
    assert cl.stats.handler_counts["header"] == 2
    assert cl.nodes[1].nic.unexpected == []


def test_non_persistent_me_unlinks_after_one_message():
    cl = pair()
    me = me_with(cl, payload=lambda ctx, p, s: None)
    deliver(cl, me, MSG[:100])
    assert not me.linked
    deliver(cl, None, MSG[:100], match_bits=7)
    assert len(cl.nodes[1].nic.unexpected) == 1


def test_initial_state_loaded_once_and_state_persists():
    cl = pair()

    def header(ctx, h, state):
        state.write_u64(0, state.read_u64(0) + 1)
        return HeaderReturn.DROP

    me = MatchEntry(match_bits=7, persistent=True, initial_state=(41).to_bytes(8, "little"),
                    program=HandlerProgram(header=header))
    me.hpu_memory = cl.nodes[1].nic.alloc_hpu_mem(64)
    deliver(cl, me, b"a")
    deliver(cl, None, b"b", match_bits=7)
    assert me.hpu_memory.read_u64(0) == 43


def test_invocation_cost_is_charged_before_the_body():
    cl = pair(trace=True)
    entered = []

    def payload(ctx, p, state):
        entered.append(ctx.now)

    me = me_with(cl, payload=payload, base_cycles=10, cycles_per_byte="0.5")
    deliver(cl, me, MSG[:100])
    start = [r[0] for r in cl.tracer.rows if r[3] == "HandlerStart"]
    assert entered[0] - start[0] == math.ceil((10 + 0.5 * 100) * 400) == 24_000


def test_lowest_idle_hpu_and_fifo_queue():
    cl = pair(nic=NicParams(num_hpus=2, flow_queue_depth=100))
    order = []

    def payload(ctx, p, state):
        order.append((p.offset, ctx.hpu_index))
        yield ctx.charge(10**6)

    me = me_with(cl, payload=payload)
    deliver(cl, me, bytes(4096 * 6))
    assert order[0] == (0, 0) and order[1] == (4096, 1)
    assert [o for o, _h in order] == sorted(o for o, _h in order)


def test_blocking_and_nonblocking_dma():
    cl = pair()
    out = {}

    def payload(ctx, p, state):
        h = ctx.dma_to_host_nb(b"abcdefgh", 0)
        out["before"] = ctx.dma_test(h)
        yield ctx.dma_wait(h)
        out["after"] = ctx.dma_test(h)
        out["read"] = yield ctx.dma_from_host(0, 8)
        swapped, old = yield ctx.dma_cas(0, int.from_bytes(b"abcdefgh", "little"), 5)
        out["cas"] = (swapped, old == int.from_bytes(b"abcdefgh", "little"))
        out["fadd"] = yield ctx.dma_fetch_add(0, 2)

    me = me_with(cl, payload=payload)
    deliver(cl, me, MSG[:16])
    assert out == {"before": False, "after": True, "read": b"abcdefgh", "cas": (True, True),
                   "fadd": 5}
    start, _ = me.host_region
    assert int.from_bytes(cl.nodes[1].host.memory.read(start, 8), "little") == 7


def test_completion_runs_after_all_dmas():
    cl = pair(trace=True)
    times = {}

    def payload(ctx, p, state):
        ctx.dma_to_host_nb(p.data, p.offset)

    def completion(ctx, dropped, fc, state):
        times["completion"] = ctx.now

    me = me_with(cl, payload=payload, completion=completion)
    deliver(cl, me, MSG)
    last_dma = max(r[0] for r in cl.tracer.rows if r[3] == "DmaComplete" and r[1] == 1)
    assert times["completion"] >= last_dma


def test_zero_length_message_runs_header_and_completion_only():
    cl = pair()
    calls = []
    me = me_with(cl, header=lambda ctx, h, s: calls.append("h"),
                 payload=lambda ctx, p, s: calls.append("p"),
                 completion=lambda ctx, d, fc, s: calls.append("c"))
    deliver(cl, me, b"")
    assert calls == ["h", "c"]
    assert completions(me)[0].delivered == 0


def test_hpu_local_atomics_and_counter():
    cl = pair()
    out = []

    def header(ctx, h, state):
        out.append(ctx.cas(8, 0, 3))
        out.append(ctx.cas(8, 0, 4))
        out.append(ctx.fadd(8, 2))
        ctx.ct_inc(5)
        out.append(ctx.ct_get())
        return HeaderReturn.DROP

    me = MatchEntry(match_bits=7, program=HandlerProgram(header=header), counter=Counter())
    me.hpu_memory = cl.nodes[1].nic.alloc_hpu_mem(16)
    deliver(cl, me, b"")
    assert out == [True, False, 3, 5]
    assert me.hpu_memory.read_u64(8) == 5


def test_flow_control_drops_and_reports():
    cl = pair(nic=NicParams(num_hpus=1, flow_queue_depth=2))
    fc_seen = []

    def payload(ctx, p, state):
        yield ctx.charge(10**5)

    me = me_with(cl, payload=payload,
                 completion=lambda ctx, dropped, fc, s: fc_seen.append((dropped > 0, fc)))
    me.host_region = region(cl, 4096 * 10)
    deliver(cl, me, bytes(4096 * 10))
    st = cl.stats
    assert st.flow_control_events == 1
    assert st.packets_dropped > 0
    assert st.packets_sent == st.packets_delivered + st.packets_dropped
    assert fc_seen == [(True, True)]
    rec, = completions(me)
    assert rec.flow_control_triggered
    nic = cl.nodes[1].nic
    assert 0 in nic.disabled
    nic.reenable_portal(0)
    assert not nic.disabled


def test_hpu_memory_allocation_limits():
    cl = pair(nic=NicParams(hpu_mem_bytes=100 * 1024))
    nic = cl.nodes[1].nic
    with pytest.raises(LimitExceeded):
        nic.alloc_hpu_mem(64 * 1024 + 1)
    a = nic.alloc_hpu_mem(64 * 1024)
    with pytest.raises(OutOfHpuMemory):
        nic.alloc_hpu_mem(64 * 1024)
    nic.free_hpu_mem(a)
    with pytest.raises(HandlerUsageError):
        nic.free_hpu_mem(a)
    with pytest.raises(SegmentationViolation):
        a.read_u64(0)
    nic.alloc_hpu_mem(64 * 1024)


def test_hpu_memory_word_access():
    m = HpuMemory(16)
    m.write_u64(8, 2**64 + 5)
    assert m.read_u64(8) == 5
    with pytest.raises(SegmentationViolation):
        m.read_u64(4)
    with pytest.raises(SegmentationViolation):
        m.write(12, b"12345")


def test_me_append_validates_limits():
    cl = pair()
    nic = cl.nodes[1].nic
    with pytest.raises(LimitExceeded):
        nic.me_append(MatchEntry(program=HandlerProgram(cycles_per_byte=9)))
    with pytest.raises(LimitExceeded):
        nic.me_append(MatchEntry(program=HandlerProgram(user_hdr_size=128)))
    with pytest.raises(LimitExceeded):
        nic.me_append(MatchEntry(program=HandlerProgram(user_hdr_size=32)))
    with pytest.raises(HandlerTooLarge):
        nic.me_append(MatchEntry(program=HandlerProgram(code_bytes=10**6)))
    with pytest.raises(LimitExceeded):
        nic.me_append(MatchEntry(program=HandlerProgram(), initial_state=bytes(5000)))
    with pytest.raises(ValueError):
        NiLimits(max_payload_size=8192).validate(4096)


def test_ignore_bits_select_wildcards():
    cl = pair()
    me = MatchEntry(match_bits=0x00FF, ignore_bits=0xFF00, host_region=region(cl, 8))
    deliver(cl, me, b"12345678", match_bits=0xAB_FF)
    assert len(completions(me)) == 1
    cl = pair()
    me = MatchEntry(match_bits=0x00FF, ignore_bits=0xFF00, host_region=region(cl, 8))
    deliver(cl, me, b"12345678", match_bits=0x01_00FE)
    assert completions(me) == [] and len(cl.nodes[1].nic.unexpected) == 1


def test_truncation_at_region_end():
    cl = pair()
    me = MatchEntry(match_bits=7, host_region=region(cl, 100))
    deliver(cl, me, MSG[:300])
    rec, = completions(me)
    assert rec.delivered == 100 and rec.dropped == 200


def test_completion_return_codes():
    assert CompletionReturn.SUCCESS.value == "SUCCESS"
    assert HeaderReturn.DROP_PENDING.pending and HeaderReturn.DROP_PENDING.action == "drop"
    assert HeaderReturn.SEGV.is_error and HeaderReturn.SEGV.action == "drop"
    assert HeaderReturn.PROCEED_PENDING.action == "proceed"


def test_counter_use_without_counter_fails():
    cl = pair()

    def header(ctx, h, state):
        ctx.ct_inc()
        return HeaderReturn.DROP

    me = MatchEntry(match_bits=7, program=HandlerProgram(header=header))
    deliver(cl, me, b"")
    assert completions(me)[0].header_code is HeaderReturn.FAIL
