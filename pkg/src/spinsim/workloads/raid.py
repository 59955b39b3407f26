"""Distributed RAID update: four data nodes and one dedicated parity node.

Logical block ``j`` lives on data node ``j % 4`` at stripe ``j // 4``; the
parity node keeps the XOR of each stripe at the same local offset. An
update writes ``n'`` over ``n`` on a data node and applies
``p' = p ^ n ^ n'`` at the parity node, then acknowledges back to the
client through the data node.

Node ids: client 0, parity 1, data nodes 2..5.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Optional

from ..baselines import rdma_post
from ..handlers import HandlerProgram, HeaderReturn, PayloadReturn
from ..network import packets_in
from ..nic import MatchEntry
from ..report import RunReport
from .common import Mode, Setup, UnsupportedMode, as_mode, incomplete, pattern, xor_bytes

CLIENT = 0
PARITY = 1
DATA = 10
DELTA = 11
ACK_DATA = 12
ACK_CLIENT = 13

# shared HPU state words at a data node
EXPECTED = 0
ACKS = 8
MTU = 16


@dataclass(frozen=True)
class RaidConfig:
    data_nodes: int = 4
    block_size: int = 4096
    stripes: int = 64

    @property
    def node_capacity(self) -> int:
        return self.block_size * self.stripes

    @property
    def capacity(self) -> int:
        return self.node_capacity * self.data_nodes

    def data_node(self, index: int) -> int:
        return 2 + index

    def locate(self, logical: int) -> tuple[int, int]:
        block, within = divmod(logical, self.block_size)
        return block % self.data_nodes, (block // self.data_nodes) * self.block_size + within

    def split(self, offset: int, length: int) -> list[tuple[int, int, list[tuple[int, int]]]]:
        """Per data node: ``(index, local_offset, [(logical_off, n), ...])`` for an update.

        Each node's share of a contiguous logical range is contiguous locally.
        """
        if offset < 0 or offset + length > self.capacity:
            raise ValueError("update outside the array")
        per: dict[int, list] = {}
        m = offset
        while m < offset + length:
            n = min(self.block_size - m % self.block_size, offset + length - m)
            idx, local = self.locate(m)
            per.setdefault(idx, []).append((local, m, n))
            m += n
        out = []
        for idx in sorted(per):
            pieces = per[idx]
            out.append((idx, pieces[0][0], [(lo, n) for _l, lo, n in pieces]))
        return out


def _data_header(ctx, h, state):
    state.write_u64(ACKS, 0)
    state.write_u64(EXPECTED, packets_in(h.length, state.read_u64(MTU)))
    return HeaderReturn.PROCESS_DATA


def _data_payload(ctx, p, state):
    off = ctx.header.offset + p.offset
    old = yield ctx.dma_from_host(off, p.length)
    ctx.dma_to_host_nb(p.data, off)
    ctx.put_from_device(xor_bytes(old, p.data), PARITY, match_bits=DELTA, remote_offset=off)
    return PayloadReturn.SUCCESS


def _data_ack(ctx, h, state):
    if ctx.fadd(ACKS, 1) + 1 == state.read_u64(EXPECTED):
        ctx.put_from_device(b"", CLIENT, match_bits=ACK_CLIENT)
    return HeaderReturn.DROP


def _parity_payload(block_size: int, spin_cycles):
    def payload(ctx, p, state):
        off = ctx.header.offset + p.offset
        locks = range(off // block_size, (off + p.length - 1) // block_size + 1)
        for b in locks:  # ascending order, so no deadlock
            while not ctx.cas(8 * b, 0, 1):
                yield ctx.charge(spin_cycles)
                yield ctx.yield_()
        par = yield ctx.dma_from_host(off, p.length)
        yield ctx.dma_to_host(xor_bytes(par, p.data), off)
        for b in locks:
            state.write_u64(8 * b, 0)
        ctx.put_from_device(b"", ctx.header.source_id, match_bits=ACK_DATA)
        return PayloadReturn.SUCCESS
    return payload


class RaidArray:
    """A RAID group inside its own cluster; updates run one at a time."""

    def __init__(self, mode, setup: Optional[Setup] = None, config: Optional[RaidConfig] = None):
        self.mode = as_mode(mode)
        if self.mode is Mode.PORTALS4:
            raise UnsupportedMode("Portals 4 cannot compute parity; use rdma or spin_*")
        self.setup = setup or Setup()
        self.config = config or RaidConfig()
        cfg = self.config
        self.cluster = cl = self.setup.cluster(2 + cfg.data_nodes)
        cap = cfg.node_capacity
        self.store = {}
        for i in range(cfg.data_nodes):
            node = cl.nodes[cfg.data_node(i)]
            self.store[cfg.data_node(i)] = node.host.fill(cap, pattern(cap, self.setup.seed, i))
        blocks = [self.read_node(cfg.data_node(i)) for i in range(cfg.data_nodes)]
        self.store[PARITY] = cl.nodes[PARITY].host.fill(cap, reduce(xor_bytes, blocks))
        self.client_buf = cl.nodes[CLIENT].host.fill(cfg.capacity)
        self._acks = 0
        self._expected = 0
        self._done: Optional[int] = None
        cl.nodes[CLIENT].nic.me_append(MatchEntry(match_bits=ACK_CLIENT, persistent=True,
                                                  on_complete=self._client_ack))
        if self.mode.is_spin:
            self._install_spin()
        else:
            self._install_rdma()

    def read_node(self, node: int) -> bytes:
        return self.cluster.nodes[node].host.memory.read(self.store[node], self.config.node_capacity)

    def _client_ack(self, t, rec):
        self._acks += 1
        if self._acks == self._expected:
            self._done = t

    def _install_spin(self):
        cfg, cl, s = self.config, self.cluster, self.setup
        cost = dict(base_cycles=s.cost("raid", "base_cycles"),
                    cycles_per_byte=s.cost("raid", "cycles_per_byte"))
        cap = cfg.node_capacity
        for i in range(cfg.data_nodes):
            node = cl.nodes[cfg.data_node(i)]
            shared = node.nic.alloc_hpu_mem(64)
            shared.write_u64(MTU, cl.network.mtu)
            node.nic.me_append(MatchEntry(
                match_bits=DATA, host_region=(self.store[node.node_id], cap), persistent=True,
                hpu_memory=shared, name="raid_data",
                program=HandlerProgram(header=_data_header, payload=_data_payload,
                                       name="raid_data", **cost)))
            node.nic.me_append(MatchEntry(
                match_bits=ACK_DATA, persistent=True, hpu_memory=shared, name="raid_ack",
                program=HandlerProgram(header=_data_ack, name="raid_ack",
                                       base_cycles=cost["base_cycles"])))
        par = cl.nodes[PARITY]
        par.nic.me_append(MatchEntry(
            match_bits=DELTA, host_region=(self.store[PARITY], cap), persistent=True,
            hpu_memory=par.nic.alloc_hpu_mem(8 * cfg.stripes), name="raid_parity",
            program=HandlerProgram(payload=_parity_payload(cfg.block_size,
                                                           s.cost("raid", "spin_cycles")),
                                   name="raid_parity", **cost)))

    def _install_rdma(self):
        cfg, cl = self.config, self.cluster
        cap = cfg.node_capacity
        par = cl.nodes[PARITY]
        for i in range(cfg.data_nodes):
            nid = cfg.data_node(i)
            node = cl.nodes[nid]
            inbox = node.host.fill(cap)
            delta = node.host.fill(cap)
            par_inbox = par.host.fill(cap)

            def on_data(t, rec, node=node, inbox=inbox, delta=delta, nid=nid):
                def work():
                    host, mem = node.host, node.host.memory
                    off, n = rec.offset, rec.length
                    done = host.mem_access(cl.now, read=2 * n, write=2 * n)
                    new = mem.read(inbox + off, n)
                    old = mem.read(self.store[nid] + off, n)
                    mem.write(self.store[nid] + off, new)
                    mem.write(delta + off, xor_bytes(old, new))
                    rdma_post(node, done, PARITY, host_offset=delta + off, length=n,
                              match_bits=DELTA + 16 * nid, remote_offset=off)
                node.host.react(t, work)

            def on_delta(t, rec, par_inbox=par_inbox, nid=nid):
                def work():
                    host, mem = par.host, par.host.memory
                    off, n = rec.offset, rec.length
                    done = host.mem_access(cl.now, read=2 * n, write=n)
                    p = mem.read(self.store[PARITY] + off, n)
                    mem.write(self.store[PARITY] + off, xor_bytes(p, mem.read(par_inbox + off, n)))
                    rdma_post(par, done, nid, host_offset=0, length=0, match_bits=ACK_DATA)
                par.host.react(t, work)

            def on_ack(t, rec, node=node):
                node.host.react(t, lambda: rdma_post(node, cl.now, CLIENT, host_offset=0,
                                                      length=0, match_bits=ACK_CLIENT))

            node.nic.me_append(MatchEntry(match_bits=DATA, host_region=(inbox, cap),
                                          persistent=True, on_complete=on_data))
            node.nic.me_append(MatchEntry(match_bits=ACK_DATA, persistent=True, on_complete=on_ack))
            par.nic.me_append(MatchEntry(match_bits=DELTA + 16 * nid, host_region=(par_inbox, cap),
                                         persistent=True, on_complete=on_delta))

    def update(self, offset: int, data: bytes) -> int:
        """Write ``data`` at logical ``offset``; returns time from post to the last client ack."""
        cl, cfg = self.cluster, self.config
        client = cl.nodes[CLIENT]
        parts = cfg.split(offset, len(data))
        client.host.memory.write(self.client_buf + offset, data)
        t0 = cl.now
        self._acks = 0
        self._expected = len(parts)
        self._done = None
        # gather each node's share into a contiguous staging area on the client
        t = t0
        for idx, local, pieces in parts:
            share = b"".join(data[lo - offset:lo - offset + n] for lo, n in pieces)
            stage = client.host.fill(len(share), share)
            t = rdma_post(client, t, cfg.data_node(idx), host_offset=stage, length=len(share),
                          match_bits=DATA, remote_offset=local)
        cl.run()
        if self._done is None:
            raise incomplete(cl, "RAID update")
        return self._done - t0

    def stripes_consistent(self) -> bool:
        cfg = self.config
        blocks = [self.read_node(cfg.data_node(i)) for i in range(cfg.data_nodes)]
        return reduce(xor_bytes, blocks) == self.read_node(PARITY)

    def logical(self, offset: int, length: int) -> bytes:
        out = bytearray()
        cfg = self.config
        m = offset
        while m < offset + length:
            idx, local = cfg.locate(m)
            n = min(cfg.block_size - m % cfg.block_size, offset + length - m)
            node = cfg.data_node(idx)
            out += self.cluster.nodes[node].host.memory.read(self.store[node] + local, n)
            m += n
        return bytes(out)


def run_raid_update(mode, update_size: int, setup: Optional[Setup] = None,
                    config: Optional[RaidConfig] = None) -> RunReport:
    setup = setup or Setup()
    config = config or RaidConfig()
    if update_size > config.capacity:
        config = RaidConfig(config.data_nodes, config.block_size,
                            -(-update_size // (config.block_size * config.data_nodes)))
    arr = RaidArray(mode, setup, config)
    latency = arr.update(0, pattern(update_size, setup.seed, 99))
    rep = RunReport.from_cluster(arr.cluster, "raid", arr.mode.value, latency_ps=latency,
                                 payload_bytes=update_size, sweep_param="update_size",
                                 sweep_value=update_size,
                                 extra={"stripes_consistent": int(arr.stripes_consistent())})
    return rep
