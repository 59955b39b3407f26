"""Execute a configuration and write its outputs."""

from __future__ import annotations

import os
from typing import Optional

from .config import ExperimentConfig
from .core import SimulationError
from .handlers import HandlerUsageError
from .report import RunReport, write_results, write_trace
from .workloads import EXPERIMENTS


class RunFailed(SimulationError):
    """A run failed; the message names the experiment, mode and sweep value."""


def run_config(cfg: ExperimentConfig) -> list[RunReport]:
    """One report per (mode, sweep value), modes outermost, in config order."""
    exp = EXPERIMENTS[cfg.experiment]
    setup = cfg.setup()
    reports = []
    for mode in cfg.modes:
        for value in cfg.sweep_values:
            try:
                rep = exp.run(mode, value, cfg.params, setup)
            except (SimulationError, ValueError, RuntimeError, ArithmeticError, MemoryError,
                    HandlerUsageError) as e:
                raise RunFailed(f"{cfg.experiment} mode={mode} "
                                f"{cfg.sweep_name}={value}: {e}") from e
            reports.append(rep)
    return reports


def trace_name(rep: RunReport) -> str:
    return f"{rep.experiment}_{rep.mode}_{rep.profile}_{rep.sweep_value}.csv"


def write_outputs(out_dir, reports: list[RunReport], results_name: str = "results.csv") -> list[str]:
    """Write ``results.csv`` and one trace per traced report; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, results_name)]
    write_results(paths[0], reports)
    traced = [r for r in reports if r.trace is not None]
    if traced:
        tdir = os.path.join(out_dir, "traces")
        os.makedirs(tdir, exist_ok=True)
        for rep in traced:
            p = os.path.join(tdir, trace_name(rep))
            write_trace(p, rep.trace)
            paths.append(p)
    return paths


def run_to(cfg: ExperimentConfig, out_dir, reports: Optional[list] = None) -> list[str]:
    return write_outputs(out_dir, reports if reports is not None else run_config(cfg))
