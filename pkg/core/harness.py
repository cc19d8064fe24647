"""Experiment orchestration: dynamics, sweeps, mask searches and convergence studies.

The module-level functions compute results; ``ExperimentRunner`` looks the
experiment kind up in its registry, times it and persists the outputs.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.analysis import classify, fit_decay_rate, fit_oscillation, rms_distance, rms_on_common_grid
from core.bath import BathSpec, grid_steps
from core.engine import EngineConfig, collect_stats, run_engine
from core.ensemble import Mask
from core.models import (
    Axis,
    ConvergenceEntry,
    DomainError,
    FilterSweepEntry,
    MaskSearchEntry,
    MemorySweepEntry,
    ResourceLimitError,
    RunResult,
)
from core.oracles import spurious_rate
from core.store import ResultStore
from core.tls import TwoLevelSystem
from tools.file_utils import slugify

LOGGER = logging.getLogger(__name__)

DEFAULT_MAX_CANDIDATES = 10_000
DEFAULT_REFERENCE_MASK_SIZE = 6
DEFAULT_TOLERANCE = 1e-3

EXPERIMENT_LABELS: Dict[str, str] = {
    "dynamics": "Real-time dynamics",
    "filter_sweep": "Filter threshold sweep",
    "memory_sweep": "Memory cut-off sweep",
    "mask_search": "Exhaustive mask search",
    "mask_budget": "Mask budget search",
    "convergence": "Time-step and memory convergence",
}


class CombinatorialBudgetError(ResourceLimitError):
    """A mask search would run more candidates than allowed."""

    def __init__(self, count: int, limit: int):
        super().__init__(f"mask search needs {count} candidates, above the limit of {limit}")
        self.count = count
        self.limit = limit


def _utcnow_iso() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    tls: TwoLevelSystem
    baths: Dict[Axis, BathSpec]
    engine: EngineConfig
    kind: str = "dynamics"
    params: Dict[str, Any] = field(default_factory=dict)
    output_dir: str = "data/results"
    observable: str = "sigma_z"
    name: str = "experiment"

    @property
    def active_axes(self) -> List[Axis]:
        return sorted(self.baths) if self.baths else [Axis.Z]

    @property
    def t_tot(self) -> float:
        return self.engine.dt * self.engine.n_steps

    def with_engine(self, **changes: Any) -> "ExperimentConfig":
        return replace(self, engine=self.engine.with_updates(**changes))


def _memory_updates(axes: Sequence[Axis], mem_steps: int, dt: float) -> Dict[str, Any]:
    updates: Dict[str, Any] = {}
    for axis in axes:
        updates[f"t_mem_{axis.value}"] = mem_steps * dt
        updates[f"mask_{axis.value}"] = Mask.uniform(mem_steps, axis)
    return updates


# --------------------------------------------------------------------------- #
# Dynamics and filtering
# --------------------------------------------------------------------------- #


def run_dynamics(config: ExperimentConfig) -> RunResult:
    """Run the configured engine once."""
    return run_engine(config.engine, config.baths, config.tls)


@dataclass
class FilterSweepReport:
    entries: List[FilterSweepEntry]
    runs: Dict[float, RunResult]
    reference: RunResult


def filter_sweep(config: ExperimentConfig, thetas: Sequence[float]) -> FilterSweepReport:
    """Run each threshold and compare path counts with the unfiltered reference."""
    values = [float(theta) for theta in thetas]
    if not values:
        raise DomainError("filter sweep needs at least one threshold")
    if any(theta < 0 for theta in values):
        raise DomainError("filter thresholds must be non-negative")
    if any(b < a for a, b in zip(values, values[1:])):
        raise DomainError(f"filter thresholds must be sorted ascending, got {values}")

    reference = run_dynamics(config.with_engine(theta=0.0))
    collect_stats(reference, reference)
    entries: List[FilterSweepEntry] = []
    runs: Dict[float, RunResult] = {}
    for theta in values:
        result = reference if theta == 0 else run_dynamics(config.with_engine(theta=theta))
        stats = collect_stats(result, reference)
        runs[theta] = result
        entries.append(
            FilterSweepEntry(
                theta=theta,
                final_norm=stats.final_norm,
                path_fraction=stats.path_fraction,
                dropped_total=stats.dropped_total,
                peak_paths=stats.peak_paths,
                min_amplitude=min(stats.min_amplitudes[1:], default=0.0),
            )
        )
    return FilterSweepReport(entries=entries, runs=runs, reference=reference)


# --------------------------------------------------------------------------- #
# Memory sweeps
# --------------------------------------------------------------------------- #


@dataclass
class MemorySweepReport:
    axis: str
    entries: List[MemorySweepEntry]
    runs: Dict[float, RunResult]
    benchmark: RunResult
    tolerance: float
    converged: bool


def _sweep_axes(config: ExperimentConfig, axis: str) -> List[Axis]:
    """Resolve x, z or both against the configured baths."""
    axis = str(axis).lower()
    active = config.active_axes
    if axis == "both":
        return active
    chosen = Axis(axis)
    if chosen not in config.baths:
        raise DomainError(f"cannot sweep the {axis} memory: no {axis}-coupled bath configured")
    return [chosen]


def benchmark_config(config: ExperimentConfig, reference_mask_size: int) -> ExperimentConfig:
    """Extended memory to t_tot with a uniform mask of the reference size on every bath."""
    size = min(reference_mask_size, config.engine.n_steps)
    updates: Dict[str, Any] = {"extended_memory": True, "theta": 0.0, "drop_fraction": 0.0}
    for axis in config.active_axes:
        updates[f"t_mem_{axis.value}"] = None
        updates[f"mask_{axis.value}"] = Mask.uniform(size, axis)
    return config.with_engine(**updates)


def _sweep_entry(
    config: ExperimentConfig, result: RunResult, benchmark: RunResult, t_mem: Optional[float]
) -> MemorySweepEntry:
    trajectory = result.trajectory
    observable = trajectory.observable(config.observable)
    fit = fit_oscillation(trajectory.times, trajectory.sigma_z())
    stats = result.stats
    return MemorySweepEntry(
        t_mem=t_mem,
        mem_steps=None if t_mem is None else grid_steps(t_mem, config.engine.dt),
        benchmark=t_mem is None,
        rms=rms_distance(observable, benchmark.trajectory.observable(config.observable)),
        frequency=fit.frequency,
        envelope_rate=fit.envelope_rate,
        mean_paths=stats.mean_paths,
        peak_paths=stats.peak_paths,
        mean_mem_bytes=stats.mean_mem_bytes,
        peak_mem_bytes=stats.peak_mem_bytes,
    )


def memory_sweep(
    config: ExperimentConfig,
    axis: str,
    t_mems: Sequence[float],
    reference_mask_size: int = DEFAULT_REFERENCE_MASK_SIZE,
    tolerance: float = DEFAULT_TOLERANCE,
    fit_window: Optional[Tuple[float, float]] = None,
) -> MemorySweepReport:
    """Truncated runs per cut-off against an extended-memory benchmark.

    Pure-dephasing sweeps also report the fitted and predicted coherence decay rates.
    """
    axes = _sweep_axes(config, axis)
    dt = config.engine.dt
    cutoffs = [float(t) for t in t_mems]
    if not cutoffs:
        raise DomainError("memory sweep needs at least one cut-off")
    for t_mem in cutoffs:
        steps = grid_steps(t_mem, dt)
        if not 1 <= steps <= config.engine.n_steps:
            raise DomainError(f"memory cut-off {t_mem} outside dt..t_tot")

    benchmark = run_dynamics(benchmark_config(config, reference_mask_size))
    entries: List[MemorySweepEntry] = [_sweep_entry(config, benchmark, benchmark, None)]
    runs: Dict[float, RunResult] = {}
    dephasing_only = set(config.baths) == {Axis.X}
    for t_mem in cutoffs:
        steps = grid_steps(t_mem, dt)
        updates = _memory_updates(axes, steps, dt)
        updates["extended_memory"] = False
        result = run_dynamics(config.with_engine(**updates))
        runs[t_mem] = result
        entry = _sweep_entry(config, result, benchmark, t_mem)
        if dephasing_only and steps < config.engine.n_steps - 1:
            bath = config.baths[Axis.X]
            window = fit_window or (t_mem + dt, config.t_tot)
            entry["fitted_rate"] = fit_decay_rate(result.trajectory.times, result.trajectory.coherences(), window)
            entry["predicted_rate"] = spurious_rate(bath, t_mem)
        entries.append(entry)

    largest = entries[1 + int(np.argmax(cutoffs))]
    converged = bool(largest["rms"] <= tolerance)
    LOGGER.info("Memory sweep over %s: largest cut-off rms %.3e (tolerance %.1e)", axis, largest["rms"], tolerance)
    return MemorySweepReport(
        axis=str(axis), entries=entries, runs=runs, benchmark=benchmark, tolerance=tolerance, converged=converged
    )


# --------------------------------------------------------------------------- #
# Mask searches
# --------------------------------------------------------------------------- #


def candidate_masks(window: int, size: int, axis: Axis) -> List[Mask]:
    """All masks of ``size`` lags within the window, lag 0 always included."""
    if not 1 <= size <= window:
        raise DomainError(f"{axis.value} mask size {size} outside 1..{window}")
    return [Mask((0,) + rest, axis) for rest in itertools.combinations(range(1, window), size - 1)]


def candidate_count(window: int, size: int) -> int:
    return math.comb(window - 1, size - 1)


@dataclass
class MaskSearchReport:
    entries: List[MaskSearchEntry]
    benchmark: RunResult
    candidate_count: int
    best_by_split: Dict[str, MaskSearchEntry] = field(default_factory=dict)
    trend_holds: Optional[bool] = None


def _mask_lists(masks: Dict[Axis, Mask]) -> Tuple[List[int], List[int]]:
    mask_x = list(masks[Axis.X].lags) if Axis.X in masks else []
    mask_z = list(masks[Axis.Z].lags) if Axis.Z in masks else []
    return mask_x, mask_z


def _search_benchmark(config: ExperimentConfig) -> Tuple[ExperimentConfig, RunResult]:
    """Get the full-window run every candidate is compared with."""
    updates: Dict[str, Any] = {}
    for axis in config.active_axes:
        updates[f"mask_{axis.value}"] = Mask.uniform(config.engine.window(axis), axis)
    benchmark_cfg = config.with_engine(**updates)
    return benchmark_cfg, run_dynamics(benchmark_cfg)


def _evaluate_candidates(
    config: ExperimentConfig,
    candidates: List[Dict[Axis, Mask]],
    benchmark_cfg: ExperimentConfig,
    benchmark: RunResult,
) -> List[MaskSearchEntry]:
    reference = benchmark.trajectory.observable(config.observable)
    entries: List[MaskSearchEntry] = []
    for masks in candidates:
        updates = {f"mask_{axis.value}": mask for axis, mask in masks.items()}
        if all(benchmark_cfg.engine.mask(axis) == mask for axis, mask in masks.items()):
            result = benchmark
        else:
            result = run_dynamics(config.with_engine(**updates))
        mask_x, mask_z = _mask_lists(masks)
        entries.append(
            MaskSearchEntry(
                mask_x=mask_x,
                mask_z=mask_z,
                rms=rms_distance(result.trajectory.observable(config.observable), reference),
                n_paths=int(result.stats.path_counts[-1]),
                label="",
            )
        )
    return entries


def _rank(entries: List[MaskSearchEntry], good_factor: float, unsatisfactory_factor: float) -> List[MaskSearchEntry]:
    """Sort by distance and label each entry."""
    ranked = sorted(entries, key=lambda e: (e["rms"], e["mask_x"], e["mask_z"]))
    for entry, label in zip(ranked, classify([e["rms"] for e in ranked], good_factor, unsatisfactory_factor)):
        entry["label"] = label
    return ranked


def mask_search(
    config: ExperimentConfig,
    n_mask_x: int,
    n_mask_z: int,
    max_candidates: int = DEFAULT_MAX_CANDIDATES,
    good_factor: float = 2.0,
    unsatisfactory_factor: float = 5.0,
) -> MaskSearchReport:
    """Exhaustive search over masks of the given sizes, ranked by distance to the benchmark."""
    sizes = {Axis.X: n_mask_x, Axis.Z: n_mask_z}
    axes = config.active_axes
    count = 1
    for axis in axes:
        count *= candidate_count(config.engine.window(axis), sizes[axis])
    if count > max_candidates:
        raise CombinatorialBudgetError(count, max_candidates)

    per_axis = [candidate_masks(config.engine.window(axis), sizes[axis], axis) for axis in axes]
    candidates = [dict(zip(axes, combo)) for combo in itertools.product(*per_axis)]
    LOGGER.info("Mask search: %d candidates over %s", len(candidates), [a.value for a in axes])
    benchmark_cfg, benchmark = _search_benchmark(config)
    entries = _evaluate_candidates(config, candidates, benchmark_cfg, benchmark)
    return MaskSearchReport(
        entries=_rank(entries, good_factor, unsatisfactory_factor), benchmark=benchmark, candidate_count=count
    )


def mask_budget_search(
    config: ExperimentConfig,
    total: int,
    max_candidates: int = DEFAULT_MAX_CANDIDATES,
    good_factor: float = 2.0,
    unsatisfactory_factor: float = 5.0,
) -> MaskSearchReport:
    """Every split of ``total`` mask lags between the x and z baths, ranked in one column."""
    if set(config.baths) != {Axis.X, Axis.Z}:
        raise DomainError("mask budget search needs both baths")
    window_x = config.engine.window(Axis.X)
    window_z = config.engine.window(Axis.Z)
    splits = [(n_x, total - n_x) for n_x in range(1, window_x + 1) if 1 <= total - n_x <= window_z]
    if not splits:
        raise DomainError(f"no split of {total} lags fits windows ({window_x}, {window_z})")
    count = sum(candidate_count(window_x, n_x) * candidate_count(window_z, n_z) for n_x, n_z in splits)
    if count > max_candidates:
        raise CombinatorialBudgetError(count, max_candidates)

    candidates: List[Dict[Axis, Mask]] = []
    for n_x, n_z in splits:
        for mx, mz in itertools.product(
            candidate_masks(window_x, n_x, Axis.X), candidate_masks(window_z, n_z, Axis.Z)
        ):
            candidates.append({Axis.X: mx, Axis.Z: mz})
    LOGGER.info("Mask budget search: total %d, %d splits, %d candidates", total, len(splits), count)
    benchmark_cfg, benchmark = _search_benchmark(config)
    ranked = _rank(_evaluate_candidates(config, candidates, benchmark_cfg, benchmark), good_factor, unsatisfactory_factor)

    best_by_split: Dict[str, MaskSearchEntry] = {}
    for entry in ranked:
        best_by_split.setdefault(f"{len(entry['mask_x'])},{len(entry['mask_z'])}", entry)
    x_heavy = [e["rms"] for e in ranked if len(e["mask_x"]) > len(e["mask_z"])]
    z_heavy = [e["rms"] for e in ranked if len(e["mask_z"]) > len(e["mask_x"])]
    trend = None
    if x_heavy and z_heavy:
        trend = min(x_heavy) < min(z_heavy)
    return MaskSearchReport(
        entries=ranked, benchmark=benchmark, candidate_count=count, best_by_split=best_by_split, trend_holds=trend
    )


# --------------------------------------------------------------------------- #
# Convergence
# --------------------------------------------------------------------------- #


@dataclass
class ConvergenceReport:
    dt_entries: List[ConvergenceEntry]
    mem_entries: List[ConvergenceEntry]


def convergence(
    config: ExperimentConfig,
    dts: Sequence[float],
    mem_steps: Sequence[int],
    fixed_mem_steps: Optional[int] = None,
) -> ConvergenceReport:
    """Vary dt at a fixed memory length in steps, then the memory length at the configured dt."""
    axes = config.active_axes
    t_tot = config.t_tot
    fixed = fixed_mem_steps or min(config.engine.window(axis) for axis in axes)

    dt_entries: List[ConvergenceEntry] = []
    previous: Optional[RunResult] = None
    for dt in dts:
        n_steps = int(round(t_tot / dt))
        if n_steps < fixed:
            raise DomainError(f"dt={dt} leaves {n_steps} steps, fewer than the memory length {fixed}")
        updates = _memory_updates(axes, fixed, dt)
        updates.update(dt=float(dt), n_steps=n_steps, extended_memory=False)
        result = run_dynamics(config.with_engine(**updates))
        rms = None
        if previous is not None:
            rms = rms_on_common_grid(
                result.trajectory.times,
                result.trajectory.observable(config.observable),
                previous.trajectory.times,
                previous.trajectory.observable(config.observable),
            )
        dt_entries.append(
            ConvergenceEntry(
                dt=float(dt), mem_steps=fixed, t_mem=fixed * dt, rms_to_previous=rms, peak_paths=result.stats.peak_paths
            )
        )
        previous = result

    mem_runs: List[Tuple[int, RunResult]] = []
    for steps in mem_steps:
        if not 1 <= steps <= config.engine.n_steps:
            raise DomainError(f"memory length {steps} outside 1..{config.engine.n_steps}")
        updates = _memory_updates(axes, int(steps), config.engine.dt)
        updates["extended_memory"] = False
        mem_runs.append((int(steps), run_dynamics(config.with_engine(**updates))))
    mem_entries: List[ConvergenceEntry] = []
    if mem_runs:
        reference = max(mem_runs, key=lambda item: item[0])[1]
        ref_values = reference.trajectory.observable(config.observable)
        for steps, result in mem_runs:
            mem_entries.append(
                ConvergenceEntry(
                    dt=config.engine.dt,
                    mem_steps=steps,
                    t_mem=steps * config.engine.dt,
                    rms_to_reference=rms_distance(result.trajectory.observable(config.observable), ref_values),
                    peak_paths=result.stats.peak_paths,
                )
            )
    return ConvergenceReport(dt_entries=dt_entries, mem_entries=mem_entries)


# --------------------------------------------------------------------------- #
# Runner
# --------------------------------------------------------------------------- #


def run_summary(result: RunResult) -> Dict[str, Any]:
    """Get the figures written to a dynamics summary."""
    stats = result.stats
    return {
        "n_steps": len(result.trajectory) - 1,
        "final_norm": stats.final_norm,
        "final_sigma_z": float(result.trajectory.sigma_z()[-1]),
        "peak_paths": stats.peak_paths,
        "mean_paths": stats.mean_paths,
        "plateau_step": stats.plateau_step,
        "path_bound": stats.path_bound,
        "peak_mem_bytes": stats.peak_mem_bytes,
        "dropped_total": stats.dropped_total,
    }


class ExperimentRunner:
    """Runs one configured experiment and writes its outputs to a ``ResultStore``."""

    def __init__(self, store: ResultStore) -> None:
        self.store = store
        self.logger = LOGGER
        self.registry = self._build_registry()

    def _build_registry(self) -> Dict[str, Callable[[ExperimentConfig, str], List[str]]]:
        """Map experiment kinds to their runners."""
        return {
            "dynamics": self._experiment_dynamics,
            "filter_sweep": self._experiment_filter_sweep,
            "memory_sweep": self._experiment_memory_sweep,
            "mask_search": self._experiment_mask_search,
            "mask_budget": self._experiment_mask_budget,
            "convergence": self._experiment_convergence,
        }

    def run(self, config: ExperimentConfig) -> Dict[str, Any]:
        """Run the configured experiment, record it in the index and return its summary."""
        kind = config.kind
        func = self.registry.get(kind)
        if func is None:
            raise DomainError(f"unknown experiment kind {kind!r}; expected one of {sorted(self.registry)}")
        run_id = f"{slugify(kind)}-{slugify(config.name)}"
        label = EXPERIMENT_LABELS.get(kind, kind)
        start_ts = time.time()
        self.logger.info("Experiment %s started: %s at %s", run_id, label, _utcnow_iso())

        files: List[str] = []
        status = "failed"
        try:
            files = func(config, run_id)
            status = "success"
        except Exception:
            self.logger.exception("Experiment %s failed", run_id)
            raise
        finally:
            duration_ms = int((time.time() - start_ts) * 1000)
            self.store.record_run(run_id, kind, status, files)
            self.logger.info("Experiment %s completed with status %s in %d ms", run_id, status, duration_ms)
        return {"id": run_id, "kind": kind, "status": status, "files": files, "duration_ms": duration_ms}

    # ------------------------------------------------------------------ #
    # Experiments
    # ------------------------------------------------------------------ #
    def _experiment_dynamics(self, config: ExperimentConfig, run_id: str) -> List[str]:
        """Single run: trajectory CSV plus summary."""
        result = run_dynamics(config)
        return [
            self.store.write_trajectory(run_id, "trajectory", result),
            self.store.write_report(run_id, "summary", run_summary(result)),
        ]

    def _experiment_filter_sweep(self, config: ExperimentConfig, run_id: str) -> List[str]:
        """One trajectory per threshold plus the sweep table."""
        report = filter_sweep(config, config.params["thetas"])
        files = [self.store.write_trajectory(run_id, f"theta-{theta:g}", result) for theta, result in report.runs.items()]
        files.append(self.store.write_report(run_id, "summary", report.entries))
        return files

    def _experiment_memory_sweep(self, config: ExperimentConfig, run_id: str) -> List[str]:
        """Benchmark and per-cutoff trajectories plus the sweep table."""
        params = config.params
        report = memory_sweep(
            config,
            params.get("axis", config.active_axes[0].value),
            params["t_mems"],
            reference_mask_size=params.get("reference_mask_size", DEFAULT_REFERENCE_MASK_SIZE),
            tolerance=params.get("tolerance", DEFAULT_TOLERANCE),
            fit_window=tuple(params["fit_window"]) if params.get("fit_window") else None,
        )
        files = [self.store.write_trajectory(run_id, "benchmark", report.benchmark)]
        files += [self.store.write_trajectory(run_id, f"t_mem-{t_mem:g}", result) for t_mem, result in report.runs.items()]
        payload = {
            "axis": report.axis,
            "tolerance": report.tolerance,
            "converged": report.converged,
            "entries": report.entries,
        }
        files.append(self.store.write_report(run_id, "summary", payload))
        return files

    def _search_params(self, config: ExperimentConfig) -> Dict[str, Any]:
        """Candidate budget and label factors shared by both mask searches."""
        params = config.params
        return {
            "max_candidates": params.get("max_candidates", DEFAULT_MAX_CANDIDATES),
            "good_factor": params.get("good_factor", 2.0),
            "unsatisfactory_factor": params.get("unsatisfactory_factor", 5.0),
        }

    def _experiment_mask_search(self, config: ExperimentConfig, run_id: str) -> List[str]:
        """Ranked mask table plus the benchmark trajectory."""
        params = config.params
        report = mask_search(
            config, params.get("n_mask_x", 1), params.get("n_mask_z", 1), **self._search_params(config)
        )
        return [
            self.store.write_report(run_id, "mask_search", report.entries),
            self.store.write_trajectory(run_id, "benchmark", report.benchmark),
        ]

    def _experiment_mask_budget(self, config: ExperimentConfig, run_id: str) -> List[str]:
        report = mask_budget_search(config, config.params["total"], **self._search_params(config))
        payload = {
            "candidate_count": report.candidate_count,
            "trend_holds": report.trend_holds,
            "best_by_split": report.best_by_split,
            "entries": report.entries,
        }
        return [self.store.write_report(run_id, "mask_budget", payload)]

    def _experiment_convergence(self, config: ExperimentConfig, run_id: str) -> List[str]:
        """dt and memory-length series."""
        params = config.params
        report = convergence(config, params.get("dts", []), params.get("mem_steps", []), params.get("fixed_mem_steps"))
        payload = {"dt": report.dt_entries, "memory": report.mem_entries}
        return [self.store.write_report(run_id, "convergence", payload)]
