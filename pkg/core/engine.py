"""Path-sum propagation of the reduced density matrix.

Three configurations share one stepping loop:

- ``general``: a z-coupled bath; coordinates are sigma_z pairs.
- ``dephasing``: an x-coupled bath only; coordinates are sigma_x pairs and the
  propagator is diagonal, so only constant paths survive.
- ``two_bath``: both; each step inserts the sigma_x pair of the previous
  point between two sigma_z pairs.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import FrozenSet, List, Mapping, Optional, Tuple

import numpy as np

from core.bath import BathSpec, EtaTable, SpectralDensity, build_eta_table, memory_steps, truncate_eta
from core.ensemble import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    EnsembleBudgetError,
    Mask,
    PathEnsemble,
    drop_smallest,
    encode_keys,
    filter_paths,
    influence_weight,
    merge_by_mask,
    readout_weight,
)
from core.models import Axis, DensityMatrix, Direction, DomainError, RunResult, RunStats, Trajectory
from core.tls import (
    TwoLevelSystem,
    from_x_basis,
    segment_propagator_dephasing,
    segment_propagator_general,
    segment_propagator_xz,
    to_x_basis,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_PATHS = 2 ** 26
SPAWN_CHUNK = 1 << 15
ISOLATED_BETA = 1.0


def _pair(code: int) -> Tuple[int, int]:
    return int(SIGMA_PLUS[code]), int(SIGMA_MINUS[code])


@dataclass(frozen=True)
class EngineConfig:
    dt: float
    n_steps: int
    baths: FrozenSet[Axis] = frozenset({Axis.Z})
    t_mem_x: Optional[float] = None
    t_mem_z: Optional[float] = None
    mask_x: Optional[Mask] = None
    mask_z: Optional[Mask] = None
    theta: float = 0.0
    extended_memory: bool = False
    initial_state: DensityMatrix = field(default_factory=lambda: DensityMatrix.from_label("z+"))
    max_paths: int = DEFAULT_MAX_PATHS
    workers: int = 1
    drop_fraction: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "baths", frozenset(Axis(a) for a in self.baths))
        if not self.dt > 0:
            raise DomainError(f"time step must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise DomainError(f"number of steps must be at least 1, got {self.n_steps}")
        if not self.baths:
            raise DomainError("at least one bath axis is required")
        if self.theta < 0:
            raise DomainError(f"filter threshold must be non-negative, got {self.theta}")
        if self.workers < 1:
            raise DomainError(f"workers must be at least 1, got {self.workers}")
        if not 0 <= self.drop_fraction < 1:
            raise DomainError(f"drop fraction must lie in [0, 1), got {self.drop_fraction}")
        for axis in self.baths:
            mask = self.mask(axis)
            if mask is None:
                continue
            if mask.axis is not axis:
                raise DomainError(f"mask for the {axis.value} bath is tagged {mask.axis.value}")
            mask.validate_window(self.window(axis))

    def t_mem(self, axis: Axis) -> Optional[float]:
        return self.t_mem_x if axis is Axis.X else self.t_mem_z

    def mask(self, axis: Axis) -> Optional[Mask]:
        return self.mask_x if axis is Axis.X else self.mask_z

    def window(self, axis: Axis) -> int:
        """Memory length N_mem in steps."""
        t_mem = self.t_mem(axis)
        if t_mem is None:
            return self.n_steps
        if not t_mem > 0:
            raise DomainError(f"memory time for the {axis.value} bath must be positive, got {t_mem}")
        steps = memory_steps(t_mem, self.dt)
        if abs(steps * self.dt - t_mem) > 1e-9 * max(1.0, t_mem):
            raise DomainError(f"memory time {t_mem} is not a multiple of dt={self.dt}")
        return max(1, min(steps, self.n_steps))

    def depth(self, axis: Axis) -> int:
        """Retained history lags (excluding the newest point)."""
        return self.n_steps + 1 if self.extended_memory else self.window(axis)

    def key_size(self, axis: Axis) -> Optional[int]:
        mask = self.mask(axis)
        if mask is not None:
            return len(mask)
        return None if self.extended_memory else self.window(axis)

    def with_updates(self, **changes) -> "EngineConfig":
        return replace(self, **changes)


def plateau_path_count(*mask_sizes: int) -> int:
    """Largest number of distinct keys for masks of the given sizes."""
    return 4 ** sum(mask_sizes)


# --------------------------------------------------------------------------- #
# Propagation
# --------------------------------------------------------------------------- #


class _Propagation:
    """One run: tables, propagator arrays and the stepping loop."""

    def __init__(self, config: EngineConfig, tls: TwoLevelSystem, tables: Mapping[Axis, EtaTable]):
        self.config = config
        self.tls = tls
        self.tables = dict(tables)
        if config.baths == {Axis.Z}:
            self.mode = "general"
            self.arity = 4
        elif config.baths == {Axis.X}:
            self.mode = "dephasing"
            self.arity = 4
        else:
            self.mode = "two_bath"
            self.arity = 16
        self.depth_z = config.depth(Axis.Z) if Axis.Z in config.baths else 0
        self.depth_x = config.depth(Axis.X) if Axis.X in config.baths else 0
        self._build_propagators()

    def _build_propagators(self) -> None:
        dt = self.config.dt
        codes = range(4)
        if self.mode == "general":
            self.propagator = np.array(
                [
                    [
                        segment_propagator_general(self.tls, dt, _pair(to)[0], _pair(frm)[0], Direction.FORWARD)
                        * segment_propagator_general(self.tls, dt, _pair(frm)[1], _pair(to)[1], Direction.BACKWARD)
                        for to in codes
                    ]
                    for frm in codes
                ]
            )
        elif self.mode == "dephasing":
            self.propagator = np.array(
                [[segment_propagator_dephasing(self.tls, dt, _pair(to), _pair(frm)) for to in codes] for frm in codes]
            )
        else:
            # [z_from, x_mid, z_to]
            self.propagator = np.array(
                [
                    [
                        [segment_propagator_xz(self.tls, dt, _pair(zt), _pair(xm), _pair(zf)) for zt in codes]
                        for xm in codes
                    ]
                    for zf in codes
                ]
            )

    # ---- ensemble construction ------------------------------------------------ #

    def _keys(self, z_history: np.ndarray, x_history: np.ndarray) -> np.ndarray:
        return encode_keys(
            z_history, x_history, self.config.mask_z, self.config.mask_x, self.depth_z, self.depth_x
        )

    def initial_ensemble(self) -> PathEnsemble:
        rho0 = self.config.initial_state
        elements = to_x_basis(rho0) if self.mode == "dephasing" else rho0.elements
        flat = elements.reshape(4)
        codes = np.flatnonzero(flat != 0).astype(np.uint8)
        history = codes[:, None]
        empty = np.zeros((codes.size, 0), dtype=np.uint8)
        values = flat[codes].astype(complex)
        axis = Axis.X if self.mode == "dephasing" else Axis.Z
        amplitudes = values * influence_weight(history, self.tables[axis], axis, 0)
        if axis is Axis.X:
            z_history, x_history = empty, history
        else:
            z_history, x_history = history, empty
        return PathEnsemble(
            step=0,
            z_history=z_history,
            x_history=x_history,
            amplitudes=amplitudes,
            readout=values.copy(),
            keys=self._keys(z_history, x_history),
        )

    def _spawn_chunk(self, parents: PathEnsemble, step: int) -> PathEnsemble:
        n = len(parents)
        if self.mode == "two_bath":
            parent = np.repeat(np.arange(n), 16)
            x_new = np.tile(np.repeat(np.arange(4, dtype=np.uint8), 4), n)
            z_new = np.tile(np.tile(np.arange(4, dtype=np.uint8), 4), n)
            z_from = parents.z_history[parent, 0]
            prop = self.propagator[z_from, x_new, z_new]
        else:
            parent = np.repeat(np.arange(n), 4)
            new = np.tile(np.arange(4, dtype=np.uint8), n)
            history = parents.x_history if self.mode == "dephasing" else parents.z_history
            prop = self.propagator[history[parent, 0], new]

        live = np.flatnonzero(prop != 0)
        parent, prop = parent[live], prop[live]
        amplitudes = parents.amplitudes[parent] * prop

        extended = self.config.extended_memory
        if self.mode == "dephasing":
            x_child = np.concatenate([new[live, None], parents.x_history[parent]], axis=1)
            table = self.tables[Axis.X]
            amplitudes = amplitudes * influence_weight(x_child, table, Axis.X, step, extended)
            readout = amplitudes * readout_weight(x_child, table, step, exclude_current=True)
            z_child = parents.z_history[parent]
            x_child = x_child[:, : self.depth_x]
        else:
            z_child = np.concatenate([(z_new if self.mode == "two_bath" else new)[live, None],
                                      parents.z_history[parent]], axis=1)
            if self.mode == "two_bath":
                x_child = np.concatenate([x_new[live, None], parents.x_history[parent]], axis=1)
                amplitudes = amplitudes * influence_weight(x_child, self.tables[Axis.X], Axis.X, step - 1, extended)
                x_child = x_child[:, : self.depth_x]
            else:
                x_child = parents.x_history[parent]
            table = self.tables[Axis.Z]
            amplitudes = amplitudes * influence_weight(z_child, table, Axis.Z, step, extended)
            readout = amplitudes * readout_weight(z_child, table, step)
            z_child = z_child[:, : self.depth_z]

        return PathEnsemble(
            step=step,
            z_history=np.ascontiguousarray(z_child),
            x_history=np.ascontiguousarray(x_child),
            amplitudes=amplitudes,
            readout=readout,
            keys=self._keys(z_child, x_child),
        )

    def spawn(self, parents: PathEnsemble, executor: Optional[ThreadPoolExecutor]) -> PathEnsemble:
        step = parents.step + 1
        requested = len(parents) * self.arity
        if requested > self.config.max_paths:
            raise EnsembleBudgetError(step, requested, self.config.max_paths)
        bounds = range(0, len(parents), SPAWN_CHUNK)
        chunks = [parents.take(np.arange(lo, min(lo + SPAWN_CHUNK, len(parents)))) for lo in bounds]
        if executor is None or len(chunks) < 2:
            parts = [self._spawn_chunk(chunk, step) for chunk in chunks]
        else:
            parts = list(executor.map(lambda chunk: self._spawn_chunk(chunk, step), chunks))
        return PathEnsemble.concatenate(parts)

    def readout(self, ensemble: PathEnsemble) -> np.ndarray:
        history = ensemble.x_history if self.mode == "dephasing" else ensemble.z_history
        if len(ensemble) == 0:
            return np.zeros((2, 2), dtype=complex)
        codes = history[:, 0]
        flat = np.bincount(codes, weights=ensemble.readout.real, minlength=4) + 1j * np.bincount(
            codes, weights=ensemble.readout.imag, minlength=4
        )
        elements = flat.reshape(2, 2)
        if self.mode == "dephasing":
            return from_x_basis(elements).elements
        return elements

    # ---- main loop ------------------------------------------------------------ #

    def path_bound(self) -> Optional[int]:
        sizes = [self.config.key_size(axis) for axis in sorted(self.config.baths)]
        if any(size is None for size in sizes):
            return None
        return plateau_path_count(*sizes)

    def run(self) -> RunResult:
        config = self.config
        started = time.time()
        stats = RunStats(path_bound=self.path_bound())
        rho = np.zeros((config.n_steps + 1, 2, 2), dtype=complex)

        ensemble = self.initial_ensemble()
        rho[0] = self.readout(ensemble)
        self._record(stats, ensemble, premerge=len(ensemble), dropped=0)

        executor = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
        try:
            for step in range(1, config.n_steps + 1):
                children = self.spawn(ensemble, executor)
                premerge = len(children)
                merged = merge_by_mask(children)
                ensemble, dropped = filter_paths(merged, config.theta)
                if config.drop_fraction > 0:
                    ensemble, extra = drop_smallest(ensemble, config.drop_fraction)
                    dropped += extra
                rho[step] = self.readout(ensemble)
                self._record(stats, ensemble, premerge=premerge, dropped=dropped)
                logger.debug(
                    "Step %d: %d spawned, %d kept, %d dropped", step, premerge, len(ensemble), dropped
                )
        finally:
            if executor is not None:
                executor.shutdown()

        trajectory = Trajectory(times=config.dt * np.arange(config.n_steps + 1), rho=rho)
        result = RunResult(trajectory=trajectory, stats=stats)
        collect_stats(result)
        logger.info(
            "Finished %s run: N=%d, dt=%g, peak paths %d, final norm %.6f (%.0f ms)",
            self.mode,
            config.n_steps,
            config.dt,
            stats.peak_paths,
            stats.final_norm,
            (time.time() - started) * 1000,
        )
        return result

    @staticmethod
    def _record(stats: RunStats, ensemble: PathEnsemble, premerge: int, dropped: int) -> None:
        magnitudes = np.abs(ensemble.amplitudes)
        stats.path_counts.append(len(ensemble))
        stats.premerge_counts.append(premerge)
        stats.dropped_counts.append(dropped)
        stats.mem_bytes.append(ensemble.memory_bytes())
        stats.min_amplitudes.append(float(magnitudes.min()) if magnitudes.size else 0.0)
        stats.max_amplitudes.append(float(magnitudes.max()) if magnitudes.size else 0.0)


def collect_stats(run: RunResult, reference: Optional[RunResult] = None) -> RunStats:
    """Fill the run-level figures of ``run.stats``; the path fraction is taken against ``reference``."""
    stats = run.stats
    norms = run.trajectory.norms()
    stats.final_norm = float(norms[-1]) if norms.size else 0.0
    if reference is None:
        stats.path_fraction = 1.0
    else:
        total = float(np.sum(reference.stats.path_counts))
        stats.path_fraction = float(np.sum(stats.path_counts)) / total if total > 0 else 0.0
    return stats


# --------------------------------------------------------------------------- #
# Entry points
# --------------------------------------------------------------------------- #


def _table(bath: BathSpec, config: EngineConfig) -> EtaTable:
    table = build_eta_table(bath, config.dt, config.n_steps)
    if config.extended_memory:
        return table
    window = config.window(bath.axis)
    if window >= config.n_steps:
        return table
    return truncate_eta(table, window * config.dt)


def _check(config: EngineConfig, expected: FrozenSet[Axis], baths: List[BathSpec]) -> None:
    if config.baths != expected:
        raise DomainError(
            f"configuration names baths {sorted(a.value for a in config.baths)}, "
            f"expected {sorted(a.value for a in expected)}"
        )
    for bath in baths:
        if bath.axis not in expected:
            raise DomainError(f"unexpected {bath.axis.value}-coupled bath")


def run_single_general(config: EngineConfig, bath_z: BathSpec, tls: TwoLevelSystem) -> RunResult:
    _check(config, frozenset({Axis.Z}), [bath_z])
    if bath_z.axis is not Axis.Z:
        raise DomainError("general-bath run needs a z-coupled bath")
    return _Propagation(config, tls, {Axis.Z: _table(bath_z, config)}).run()


def run_pure_dephasing(config: EngineConfig, bath_x: BathSpec, tls: TwoLevelSystem) -> RunResult:
    _check(config, frozenset({Axis.X}), [bath_x])
    if bath_x.axis is not Axis.X:
        raise DomainError("pure-dephasing run needs an x-coupled bath")
    return _Propagation(config, tls, {Axis.X: _table(bath_x, config)}).run()


def run_two_baths(config: EngineConfig, bath_x: BathSpec, bath_z: BathSpec, tls: TwoLevelSystem) -> RunResult:
    _check(config, frozenset({Axis.X, Axis.Z}), [bath_x, bath_z])
    if bath_x.axis is not Axis.X or bath_z.axis is not Axis.Z:
        raise DomainError("two-bath run needs one x-coupled and one z-coupled bath")
    tables = {Axis.X: _table(bath_x, config), Axis.Z: _table(bath_z, config)}
    return _Propagation(config, tls, tables).run()


def isolated_bath() -> BathSpec:
    return BathSpec(SpectralDensity(coupling=0.0, cutoff=1.0), ISOLATED_BETA, Axis.Z)


def run_engine(config: EngineConfig, baths: Mapping[Axis, BathSpec], tls: TwoLevelSystem) -> RunResult:
    """Dispatch on the configured bath axes; no baths means an isolated system."""
    if not baths:
        config = config.with_updates(
            baths=frozenset({Axis.Z}), t_mem_z=config.dt, mask_z=Mask((0,), Axis.Z), mask_x=None, t_mem_x=None
        )
        return run_single_general(config, isolated_bath(), tls)
    axes = frozenset(Axis(a) for a in baths)
    if axes != config.baths:
        config = config.with_updates(baths=axes)
    if axes == {Axis.Z}:
        return run_single_general(config, baths[Axis.Z], tls)
    if axes == {Axis.X}:
        return run_pure_dephasing(config, baths[Axis.X], tls)
    return run_two_baths(config, baths[Axis.X], baths[Axis.Z], tls)
