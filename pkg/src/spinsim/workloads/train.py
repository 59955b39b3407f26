"""A long train of equal packets against a fixed handler cost.

Checks the closed-form HPU sizing: with ``hpus_needed(T, s)`` HPUs the
ready queue stays bounded; with fewer it grows linearly with the train.
"""

from __future__ import annotations

import math
from dataclasses import replace
from fractions import Fraction
from typing import Optional

from ..baselines import rdma_post
from ..handlers import HandlerProgram, PayloadReturn
from ..nic import MatchEntry, NiLimits
from ..report import RunReport
from .. import sizing
from .common import Setup, incomplete

UNBOUNDED_QUEUE = 10**9


def occupancy_at(samples, t: int) -> int:
    """Queue length just after time ``t`` (the last sample at or before ``t``)."""
    q = 0
    for ts, qs, _arrival in samples:
        if ts > t:
            break
        q = qs
    return q


def _consume(ctx, p, state):
    return PayloadReturn.SUCCESS


def run_train(packets: int, s: int, handler_ps, num_hpus: Optional[int] = None,
              setup: Optional[Setup] = None) -> RunReport:
    """Send ``packets`` packets of ``s`` bytes back to back; each payload handler costs ``handler_ps``.

    ``num_hpus`` defaults to ``hpus_needed(handler_ps, s)``. Occupancy is the
    number of packets waiting for an HPU, a step function of time; it is read
    at 10% and 100% of the interval from the send post to the last arrival.
    The ``*_packets`` variants index by arrival count instead.
    """
    setup = setup or Setup()
    if packets < 10:
        raise ValueError("a train needs at least 10 packets")
    net = replace(setup.network, mtu=s)
    t = Fraction(handler_ps)
    if num_hpus is None:
        num_hpus = max(1, sizing.hpus_needed(t, s, net))
    frag = math.gcd(s, 64)
    nic = replace(setup.nic, num_hpus=num_hpus, flow_queue_depth=UNBOUNDED_QUEUE)
    run = setup.with_(network=net, nic=nic,
                      limits=NiLimits(max_payload_size=s, min_fragmentation_limit=frag))
    cl = run.cluster(2)
    origin, target = cl.nodes
    size = packets * s
    src = origin.host.fill(size)
    dst = target.host.fill(size)
    target.nic.track_occupancy = True
    prog = HandlerProgram(payload=_consume, name="train",
                          base_cycles=t / setup.nic.hpu_clock_ps_per_cycle)
    done = {}
    target.nic.me_append(MatchEntry(match_bits=1, host_region=(dst, size), program=prog,
                                    on_complete=lambda tt, r: done.setdefault("t", tt)))
    rdma_post(origin, 0, 1, host_offset=src, length=size, match_bits=1)
    cl.run()
    if "t" not in done:
        raise incomplete(cl, "packet train")
    samples = target.nic.occupancy
    per_packet = [q for _t, q, arrival in samples if arrival]
    t_end = max(t for t, _q, arrival in samples if arrival)
    rep = RunReport.from_cluster(
        cl, "train", "spin_stream", latency_ps=done["t"], payload_bytes=size,
        sweep_param="num_hpus", sweep_value=num_hpus,
        extra={"packets": packets, "packet_bytes": s, "handler_ps": float(t),
               "occupancy_10pct": occupancy_at(samples, t_end // 10),
               "occupancy_end": occupancy_at(samples, t_end),
               "occupancy_max": max(q for _t, q, _a in samples),
               "occupancy_10pct_packets": per_packet[len(per_packet) // 10 - 1],
               "occupancy_end_packets": per_packet[-1],
               "last_arrival_ps": t_end,
               "max_handler_time_ps": sizing.max_handler_time(num_hpus, s, net)})
    return rep
