"""Benchmark drivers and the registry the CLI runs them through."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

from .accumulate import run_accumulate
from .broadcast import run_broadcast
from .common import IncompleteRun, Mode, Setup, UnsupportedMode
from .datatype import VectorDatatype, run_datatype
from .matching import run_matching
from .pingpong import run_pingpong
from .raid import RaidConfig, run_raid_update
from .train import run_train

ALL_MODES = tuple(m.value for m in Mode)


@dataclass(frozen=True)
class Experiment:
    name: str
    description: str
    sweep_param: str
    default_values: tuple
    params: dict = field(default_factory=dict)
    modes: tuple = ALL_MODES
    runner: Callable = None

    def run(self, mode: str, value, params: dict, setup: Setup):
        if mode not in self.modes:
            raise UnsupportedMode(f"experiment {self.name} does not support mode {mode}; "
                                  f"choose from {list(self.modes)}")
        return self.runner(mode, value, {**self.params, **params}, setup)


def _datatype(mode, blocksize, p, setup):
    dt = VectorDatatype(p["start"], p["stride_factor"] * blocksize, blocksize,
                        p["msg_size"] // blocksize)
    return run_datatype(mode, dt, setup)


def _train(mode, num_hpus, p, setup):
    rep = run_train(p["packets"], p["packet_bytes"], Fraction(str(p["handler_ns"])) * 1000,
                    num_hpus=num_hpus or None, setup=setup)
    rep.mode = mode
    return rep


_SIZES = tuple(2**k for k in range(3, 21))

EXPERIMENTS = {e.name: e for e in (
    Experiment("pingpong", "two-node ping-pong round trip", "msg_size", _SIZES,
               runner=lambda m, v, p, s: run_pingpong(m, v, s)),
    Experiment("accumulate", "remote complex multiply into a host array", "msg_size",
               tuple(16 * 2**k for k in range(0, 17)), modes=("rdma", "spin_store", "spin_stream"),
               runner=lambda m, v, p, s: run_accumulate(m, v, s)),
    Experiment("broadcast", "binomial-tree broadcast from rank 0", "P", (8, 64, 256, 1024),
               params={"msg_size": 8},
               runner=lambda m, v, p, s: run_broadcast(m, v, p["msg_size"], s)),
    Experiment("datatype", "strided vector unpack at the receiver", "blocksize",
               tuple(2**k for k in range(6, 14)),
               params={"msg_size": 4 << 20, "stride_factor": 2, "start": 0},
               modes=("rdma", "spin_store", "spin_stream"), runner=_datatype),
    Experiment("raid", "RAID update with parity at a dedicated node", "update_size",
               tuple(2**k for k in range(10, 21, 2)),
               params={"block_size": 4096, "stripes": 64},
               modes=("rdma", "spin_store", "spin_stream"),
               runner=lambda m, v, p, s: run_raid_update(
                   m, v, s, RaidConfig(block_size=p["block_size"], stripes=p["stripes"]))),
    Experiment("matching", "eager and rendezvous receive matching, scenarios I-IV", "msg_size",
               (8, 4096), params={"scenario": "I", "eager_threshold": None},
               runner=lambda m, v, p, s: run_matching(m, p["scenario"], v, s,
                                                      eager_threshold=p["eager_threshold"])),
    Experiment("train", "packet train against a fixed handler cost (0 HPUs = sized)",
               "num_hpus", (0,), params={"packets": 10_000, "packet_bytes": 64, "handler_ns": 53},
               modes=("spin_stream",), runner=_train),
)}

__all__ = [
    "ALL_MODES", "EXPERIMENTS", "Experiment", "IncompleteRun", "Mode", "RaidConfig", "Setup",
    "UnsupportedMode", "VectorDatatype", "run_accumulate", "run_broadcast", "run_datatype",
    "run_matching", "run_pingpong", "run_raid_update", "run_train",
]
