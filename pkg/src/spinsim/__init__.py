"""Packet-level discrete-event simulator of sPIN NICs.

Handlers run on NIC packet processing units (HPUs); RDMA and Portals 4
are modeled as baselines on the same LogGP network and host memory model.
"""

from .cluster import Cluster
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .core import Engine, SimulationError, ns, us
from .handlers import (
    CompletionReturn, HandlerProgram, HeaderReturn, HostRegion, PayloadReturn, YIELD,
)
from .host import HostParams
from .network import NetworkParams
from .nic import DmaParams, MatchEntry, NicParams, NiLimits
from .report import RunReport
from .runner import run_config

__version__ = "0.1.0"

__all__ = [
    "Cluster", "CompletionReturn", "ConfigError", "DmaParams", "Engine", "ExperimentConfig",
    "HandlerProgram", "HeaderReturn", "HostParams", "HostRegion", "MatchEntry", "NetworkParams",
    "NiLimits", "NicParams", "PayloadReturn", "RunReport", "SimulationError", "YIELD",
    "load_config", "ns", "parse_config", "run_config", "us",
]
