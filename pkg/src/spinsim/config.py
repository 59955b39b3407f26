"""Experiment configuration: one JSON file fully determines a run.

Unknown keys are rejected with the dotted path of the offending field.
Rates (``*_per_byte``) accept integers, decimal strings or fractions such
as ``"1/3"``; times are integer picoseconds.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Optional

from .host import HostParams
from .network import NetworkParams
from .nic import DmaParams, DmaProfile, NicParams, NiLimits
from .workloads import EXPERIMENTS
from .workloads.common import DEFAULT_COSTS, Setup

MAX_SEED = 2**64 - 1


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class ExperimentConfig:
    experiment: str
    modes: list
    profile: str = "discrete"
    network: NetworkParams = field(default_factory=NetworkParams)
    nic: NicParams = field(default_factory=NicParams)
    dma: Optional[DmaParams] = None
    host: HostParams = field(default_factory=HostParams)
    limits: Optional[NiLimits] = None
    costs: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    sweep_name: str = ""
    sweep_values: list = field(default_factory=list)
    seed: int = 0
    trace: bool = False

    def setup(self) -> Setup:
        return Setup(profile=self.profile, network=self.network, nic=self.nic, dma=self.dma,
                     host=self.host, limits=self.limits, costs=self.costs, seed=self.seed,
                     trace=self.trace)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _rate(path: str, v) -> Fraction:
    if isinstance(v, bool) or not isinstance(v, (int, float, str)):
        raise ConfigError(path, f"expected a number or numeric string, got {v!r}")
    try:
        return Fraction(str(v))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(path, f"not a number: {v!r}") from None


def _params_obj(path: str, cls, raw, base=None, skip=()):
    """Build a frozen parameter dataclass from overrides, checking names and types."""
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected an object")
    base = base if base is not None else cls()
    kinds = {f.name: getattr(base, f.name) for f in dataclasses.fields(cls) if f.name not in skip}
    values = {}
    for key, v in raw.items():
        p = f"{path}.{key}"
        if key not in kinds:
            raise ConfigError(p, f"unknown key (allowed: {', '.join(sorted(kinds))})")
        default = kinds[key]
        if isinstance(default, Fraction):
            values[key] = _rate(p, v)
        elif v is None and default is None:
            values[key] = None
        elif not _is_int(v):
            raise ConfigError(p, f"expected an integer, got {v!r}")
        else:
            values[key] = v
    try:
        return dataclasses.replace(base, **values)
    except ValueError as e:
        raise ConfigError(path, str(e)) from None


def _costs(raw) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("costs", "expected an object")
    out = {}
    for wl, table in raw.items():
        if wl not in DEFAULT_COSTS:
            raise ConfigError(f"costs.{wl}", f"unknown workload (allowed: {', '.join(DEFAULT_COSTS)})")
        if not isinstance(table, dict):
            raise ConfigError(f"costs.{wl}", "expected an object")
        out[wl] = {}
        for key, v in table.items():
            if key not in DEFAULT_COSTS[wl]:
                raise ConfigError(f"costs.{wl}.{key}",
                                  f"unknown cost (allowed: {', '.join(DEFAULT_COSTS[wl])})")
            r = _rate(f"costs.{wl}.{key}", v)
            if r < 0:
                raise ConfigError(f"costs.{wl}.{key}", "must be >= 0")
            out[wl][key] = str(r)
    return out


TOP_KEYS = ("experiment", "modes", "profile", "network", "nic", "dma", "host", "limits", "costs",
            "params", "sweep", "seed", "trace")


def parse_config(raw: Any) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("", "configuration must be a JSON object")
    for key in raw:
        if key not in TOP_KEYS:
            raise ConfigError(key, f"unknown key (allowed: {', '.join(TOP_KEYS)})")
    name = raw.get("experiment")
    if name is None:
        raise ConfigError("experiment", "required")
    if name not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {name!r} "
                                        f"(allowed: {', '.join(EXPERIMENTS)})")
    exp = EXPERIMENTS[name]

    modes = raw.get("modes", list(exp.modes))
    if not isinstance(modes, list) or not modes:
        raise ConfigError("modes", "expected a non-empty list")
    for i, m in enumerate(modes):
        if m not in exp.modes:
            raise ConfigError(f"modes[{i}]", f"{m!r} not supported by {name} "
                                             f"(allowed: {', '.join(exp.modes)})")

    profile = raw.get("profile", "discrete")
    if profile not in [p.value for p in DmaProfile]:
        raise ConfigError("profile", f"expected discrete or integrated, got {profile!r}")

    network = _params_obj("network", NetworkParams, raw.get("network", {}))
    nic = _params_obj("nic", NicParams, raw.get("nic", {}))
    dma = None
    if "dma" in raw:
        dma = _params_obj("dma", DmaParams, raw["dma"], base=DmaParams.for_profile(profile),
                          skip=("profile",))
    host = _params_obj("host", HostParams, raw.get("host", {}))
    limits = None
    if "limits" in raw:
        limits = _params_obj("limits", NiLimits, raw["limits"],
                             base=NiLimits(max_payload_size=network.mtu))
        try:
            limits.validate(network.mtu)
        except ValueError as e:
            raise ConfigError("limits", str(e)) from None

    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params", "expected an object")
    for key, v in params.items():
        if key not in exp.params:
            allowed = ", ".join(exp.params) or "none"
            raise ConfigError(f"params.{key}", f"unknown parameter for {name} (allowed: {allowed})")
        default = exp.params[key]
        if isinstance(default, str):
            ok = isinstance(v, str)
        elif key == "handler_ns":
            ok = not isinstance(v, bool) and isinstance(v, (int, float)) and v >= 0
        else:
            ok = (v is None and default is None) or (_is_int(v) and v >= 0)
        if not ok:
            raise ConfigError(f"params.{key}", f"bad value {v!r}")

    sweep = raw.get("sweep", {})
    if not isinstance(sweep, dict):
        raise ConfigError("sweep", "expected an object")
    for key in sweep:
        if key not in ("name", "values"):
            raise ConfigError(f"sweep.{key}", "unknown key (allowed: name, values)")
    sweep_name = sweep.get("name", exp.sweep_param)
    if sweep_name != exp.sweep_param:
        raise ConfigError("sweep.name", f"{name} sweeps {exp.sweep_param!r}, not {sweep_name!r}")
    values = sweep.get("values", list(exp.default_values))
    if not isinstance(values, list) or not values:
        raise ConfigError("sweep.values", "expected a non-empty list")
    for i, v in enumerate(values):
        if not _is_int(v) or v < 0:
            raise ConfigError(f"sweep.values[{i}]", f"expected a non-negative integer, got {v!r}")

    seed = raw.get("seed", 0)
    if not _is_int(seed) or not 0 <= seed <= MAX_SEED:
        raise ConfigError("seed", "expected an unsigned 64-bit integer")
    trace = raw.get("trace", False)
    if not isinstance(trace, bool):
        raise ConfigError("trace", "expected true or false")

    return ExperimentConfig(name, list(modes), profile, network, nic, dma, host, limits,
                            _costs(raw.get("costs", {})), dict(params), sweep_name, list(values),
                            seed, trace)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as e:
        raise ConfigError("", f"cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ConfigError("", f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    return parse_config(raw)
