"""Host side of a node: main memory, the shared memory port and the CPU."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

from .core import Unit, as_rate, bytes_time, checked_add


@dataclass(frozen=True)
class HostParams:
    dram_latency: int = 51_000
    # 150 GiB/s expressed as ps per byte
    dram_ps_per_byte: Fraction = Fraction(10**12, 150 * 2**30)
    # poll + match + post decision, within a 10..500 instruction envelope at 2.5 GHz
    cpu_reaction: int = 200_000
    host_match: int = 30_000
    cpu_ps_per_cycle: int = 400

    def __post_init__(self):
        object.__setattr__(self, "dram_ps_per_byte", as_rate(self.dram_ps_per_byte))
        for name in ("dram_latency", "cpu_reaction", "host_match", "cpu_ps_per_cycle"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def copy_time(self, nbytes: int) -> int:
        """Uncontended memcpy: a read stream then a write stream."""
        return 2 * (self.dram_latency + bytes_time(nbytes, self.dram_ps_per_byte))


class MemoryPort:
    """FIFO host-memory port shared by NIC DMA and host copies.

    A transfer occupies the port for ``len * rate`` starting when both the
    request and the port are ready; the latency term overlaps other work.
    """

    def __init__(self):
        self.free_at = 0
        self.busy_ps = 0

    def reserve(self, t_issue: int, nbytes: int, latency: int, ps_per_byte) -> tuple[int, int]:
        start = max(t_issue, self.free_at)
        occupy = bytes_time(nbytes, ps_per_byte)
        self.free_at = checked_add(start, occupy)
        self.busy_ps += occupy
        return start, checked_add(start, latency, occupy)


class HostMemory:
    """Byte-addressable host memory with a bump allocator."""

    ALIGN = 64

    def __init__(self):
        self._buf = bytearray()

    def __len__(self):
        return len(self._buf)

    def alloc(self, nbytes: int, fill: bytes | None = None) -> int:
        start = -(-len(self._buf) // self.ALIGN) * self.ALIGN
        self._buf.extend(bytes(start + nbytes - len(self._buf)))
        if fill is not None:
            self.write(start, fill[:nbytes])
        return start

    def _check(self, offset: int, n: int):
        if offset < 0 or n < 0 or offset + n > len(self._buf):
            raise IndexError(f"host access [{offset}, {offset + n}) outside {len(self._buf)} B")

    def read(self, offset: int, n: int) -> bytes:
        self._check(offset, n)
        return bytes(self._buf[offset:offset + n])

    def write(self, offset: int, data: bytes):
        self._check(offset, len(data))
        self._buf[offset:offset + len(data)] = data

    def view(self, offset: int, n: int) -> memoryview:
        self._check(offset, n)
        return memoryview(self._buf)[offset:offset + n]


class Host:
    """A node's CPU and memory.

    CPU work is serialized: ``cpu(t, d)`` starts at ``max(t, cpu_free)``.
    Memory traffic from the CPU goes through the same port as NIC DMA.
    """

    def __init__(self, cluster, node_id: int, params: HostParams):
        self.cluster = cluster
        self.node_id = node_id
        self.params = params
        self.memory = HostMemory()
        self.port = MemoryPort()
        self.cpu_free = 0

    @property
    def nic(self):
        return self.cluster.nodes[self.node_id].nic

    def cpu(self, t: int, duration: int) -> int:
        start = max(t, self.cpu_free)
        self.cpu_free = checked_add(start, duration)
        return self.cpu_free

    def _stream(self, t: int, nbytes: int) -> int:
        p = self.params
        return self.port.reserve(t, nbytes, p.dram_latency, p.dram_ps_per_byte)[1]

    def mem_access(self, t: int, read: int = 0, write: int = 0) -> int:
        """CPU touches ``read`` then ``write`` bytes of host memory; returns finish time.

        Each stream pays DRAM latency plus its transfer time on the port.
        The CPU is busy until the last stream finishes.
        """
        start = max(t, self.cpu_free)
        done = start
        if read:
            done = self._stream(done, read)
        if write:
            done = self._stream(done, write)
        self.cpu_free = done
        self.cluster.account_host(self.node_id, read, write, "cpu")
        return done

    def copy(self, t: int, src: int, dst: int, nbytes: int) -> int:
        """memcpy inside host memory; data moves now, time is returned."""
        start = max(t, self.cpu_free)
        done = self._stream(self._stream(start, nbytes), nbytes)
        self.cpu_free = done
        self.memory.write(dst, self.memory.read(src, nbytes))
        self.cluster.account_host(self.node_id, nbytes, nbytes, "copy")
        return done

    def react(self, t: int, then: Callable[[], None], extra: int = 0) -> int:
        """CPU notices a completion (poll + match) and runs ``then`` afterwards."""
        done = self.cpu(t, self.params.cpu_reaction + extra)
        self.cluster.engine.at(done, then, node=self.node_id, unit=Unit.HOST_CPU)
        return done

    def post(self, t: int, send: Callable[[int], None]) -> int:
        """Pay the LogGP send overhead ``o`` on the CPU, then hand the message to the NIC."""
        done = self.cpu(t, self.cluster.network.o)
        self.cluster.engine.at(done, lambda: send(done), node=self.node_id, unit=Unit.HOST_CPU)
        return done

    def at_cpu(self, t: int, fn: Callable[[], None]):
        self.cluster.engine.at(max(t, self.cluster.engine.now), fn,
                               node=self.node_id, unit=Unit.HOST_CPU)

    def fill(self, nbytes: int, data: Optional[bytes] = None) -> int:
        return self.memory.alloc(nbytes, data)

