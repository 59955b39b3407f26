"""Small scaffolding shared by the NIC and handler tests."""

from spinsim.cluster import Cluster
from spinsim.nic import MatchEntry


def pair(**kw) -> Cluster:
    return Cluster(2, **kw)


def deliver(cl, me: MatchEntry, data: bytes, *, match_bits=None, hdr_data=0, remote_offset=0,
            run=True):
    """Link ``me`` at node 1 and put ``data`` from node 0's host memory at t=0."""
    src = cl.nodes[0].host.fill(len(data), data)
    if me is not None:
        cl.nodes[1].nic.me_append(me)
    mb = me.match_bits if match_bits is None else match_bits
    cl.nodes[0].nic.put(1, host_offset=src, length=len(data), match_bits=mb, hdr_data=hdr_data,
                        remote_offset=remote_offset)
    if run:
        cl.run()
    return cl


def completions(me: MatchEntry):
    return [rec for kind, rec, *_ in me.events if kind == "complete"]
