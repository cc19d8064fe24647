"""Spectral densities, bath correlation functions and influence coefficients.

Every coefficient is a frequency integral

    eta = (1/2pi) * int K(w) g(w) dw,   K(w) = J(w) exp(beta w / 2) / sinh(beta w / 2)

with J extended oddly to negative frequencies and g the Fourier kernel of the
time cell(s) the coefficient integrates the correlation function over.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Iterator, Optional, Tuple, Union

import numpy as np

from core.models import Axis, DomainError, LMode
from tools.quadrature import integrate_panels

logger = logging.getLogger(__name__)

DEFAULT_BETA = 5.0
SERIES_CUTOFF = 1e-6
LAG_CHUNK = 16
TRUNCATION_SLACK = 1e-9

Kernel = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SpectralDensity:
    """J(w) = coupling * cutoff * (w / cutoff)**ohmicity * exp(-w / cutoff)."""

    coupling: float
    cutoff: float
    ohmicity: float = 1.0

    def __post_init__(self) -> None:
        if not self.cutoff > 0:
            raise DomainError(f"cutoff must be positive, got {self.cutoff}")
        if not self.ohmicity > 0:
            raise DomainError(f"ohmicity must be positive, got {self.ohmicity}")


@dataclass(frozen=True)
class BathSpec:
    spectral: SpectralDensity
    inverse_temperature: float = DEFAULT_BETA
    axis: Axis = Axis.Z

    def __post_init__(self) -> None:
        beta = self.inverse_temperature
        if beta is None or not math.isfinite(beta) or beta <= 0:
            raise DomainError(f"inverse temperature must be positive and finite, got {beta}")
        object.__setattr__(self, "axis", Axis(self.axis))

    @property
    def coupling(self) -> float:
        return self.spectral.coupling

    def scaled(self, factor: float) -> "BathSpec":
        return replace(self, spectral=replace(self.spectral, coupling=self.spectral.coupling * factor))


def spectral_density(sd: SpectralDensity, omega: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise DomainError("spectral density is defined for omega >= 0")
    value = sd.coupling * sd.cutoff * (w / sd.cutoff) ** sd.ohmicity * np.exp(-w / sd.cutoff)
    return float(value) if value.ndim == 0 else value


def thermal_weight(bath: BathSpec, omega: np.ndarray) -> np.ndarray:
    """K(w) for the oddly extended J, finite through w = 0."""
    sd = bath.spectral
    beta = bath.inverse_temperature
    w = np.asarray(omega, dtype=float)
    x = beta * w
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        bose = np.where(
            np.abs(w) < SERIES_CUTOFF * sd.cutoff,
            1.0 + x / 2.0 + x * x / 12.0,
            x / -np.expm1(-x),
        )
        reduced = (np.abs(w) / sd.cutoff) ** (sd.ohmicity - 1.0) * np.exp(-np.abs(w) / sd.cutoff)
    return (2.0 / beta) * sd.coupling * reduced * bose


def frequency_bound(bath: BathSpec) -> float:
    return max(40.0 * bath.spectral.cutoff, 40.0 / bath.inverse_temperature)


def spectral_integral(bath: BathSpec, kernel: Kernel) -> np.ndarray:
    """(1/2pi) int K(w) kernel(w) dw; ``kernel`` maps (M,) to (..., M)."""
    bound = frequency_bound(bath)

    def integrand(omega: np.ndarray) -> np.ndarray:
        return thermal_weight(bath, omega) * kernel(omega)

    return integrate_panels(integrand, -bound, bound) / (2.0 * np.pi)


# --------------------------------------------------------------------------- #
# Frequency kernels of the time cells
# --------------------------------------------------------------------------- #


def _sinc(x: np.ndarray) -> np.ndarray:
    # sin(x) / x
    return np.sinc(x / np.pi)


def _same_cell_kernel(width: float) -> Kernel:
    """Triangle s <= tau inside one cell: (1 - exp(-i w h) - i w h) / w**2."""

    def kernel(omega: np.ndarray) -> np.ndarray:
        x = omega * width
        real = 0.5 * _sinc(x / 2.0) ** 2
        small = np.abs(x) < 0.1
        safe = np.where(small, 1.0, x)
        x2 = x * x
        series = -x / 6.0 + x * x2 / 120.0 - x * x2 * x2 / 5040.0 + x * x2 * x2 * x2 / 362880.0
        imag = np.where(small, series, (np.sin(safe) - safe) / (safe * safe))
        return (width * width * (real + 1j * imag))[None, :]

    return kernel


def _full_cells_kernel(dt: float, lags: np.ndarray) -> Kernel:
    def kernel(omega: np.ndarray) -> np.ndarray:
        envelope = dt * dt * _sinc(omega * dt / 2.0) ** 2
        return envelope[None, :] * np.exp(-1j * np.outer(lags, omega * dt))

    return kernel


def _edge_cells_kernel(dt: float, lags: np.ndarray) -> Kernel:
    # one half cell against one full cell
    def kernel(omega: np.ndarray) -> np.ndarray:
        envelope = 0.5 * dt * dt * _sinc(omega * dt / 4.0) * _sinc(omega * dt / 2.0)
        return envelope[None, :] * np.exp(-1j * np.outer(lags - 0.25, omega * dt))

    return kernel


def _corner_cells_kernel(dt: float, lags: np.ndarray) -> Kernel:
    # two half cells
    def kernel(omega: np.ndarray) -> np.ndarray:
        envelope = 0.25 * dt * dt * _sinc(omega * dt / 4.0) ** 2
        return envelope[None, :] * np.exp(-1j * np.outer(lags - 0.5, omega * dt))

    return kernel


def _running_integral_kernel(t: float) -> Kernel:
    # int_0^t exp(-i w u) du
    def kernel(omega: np.ndarray) -> np.ndarray:
        return (t * np.exp(-0.5j * omega * t) * _sinc(omega * t / 2.0))[None, :]

    return kernel


def _ramp_moment(x: np.ndarray) -> np.ndarray:
    """int_0^1 s exp(-i x s) ds."""
    small = np.abs(x) < 0.1
    safe = np.where(small, 1.0, x)
    closed = ((1.0 + 1j * safe) * np.exp(-1j * safe) - 1.0) / (safe * safe)
    series = np.zeros(x.shape, dtype=complex)
    term = np.ones(x.shape, dtype=complex)
    for k in range(10):
        series += term / (k + 2)
        term = term * (-1j * x) / (k + 1)
    return np.where(small, series, closed)


def _linear_piece(omega: np.ndarray, start: float, width: float, w_start: float, w_end: float) -> np.ndarray:
    # int over [start, start + width] of a linear weight times exp(-i w u)
    x = omega * width
    flat = np.exp(-0.5j * x) * _sinc(x / 2.0)
    return width * np.exp(-1j * omega * start) * (w_start * flat + (w_end - w_start) * _ramp_moment(x))


def _cut_full_kernel(dt: float, lag: int) -> Kernel:
    # rising half of the full-cell tent; the part past lag * dt is cut
    def kernel(omega: np.ndarray) -> np.ndarray:
        return _linear_piece(omega, (lag - 1) * dt, dt, 0.0, dt)[None, :]

    return kernel


def _cut_edge_kernel(dt: float, lag: int) -> Kernel:
    # ramp and plateau of the half-against-full trapezoid; the falling ramp is cut
    def kernel(omega: np.ndarray) -> np.ndarray:
        ramp = _linear_piece(omega, (lag - 1) * dt, dt / 2.0, 0.0, dt / 2.0)
        plateau = _linear_piece(omega, (lag - 0.5) * dt, dt / 2.0, dt / 2.0, dt / 2.0)
        return (ramp + plateau)[None, :]

    return kernel


def _lag_integrals(bath: BathSpec, family: Callable[[np.ndarray], Kernel], n_lags: int) -> np.ndarray:
    """Values indexed by lag 0..n_lags; lag 0 stays zero."""
    values = np.zeros(n_lags + 1, dtype=complex)
    lags = np.arange(1, n_lags + 1, dtype=float)
    for start in range(0, n_lags, LAG_CHUNK):
        chunk = lags[start:start + LAG_CHUNK]
        values[start + 1:start + 1 + chunk.size] = spectral_integral(bath, family(chunk))
    return values


def correlation_function(bath: BathSpec, t: Union[float, np.ndarray]) -> Union[complex, np.ndarray]:
    times = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(times.size, dtype=complex)
    for start in range(0, times.size, LAG_CHUNK):
        chunk = times[start:start + LAG_CHUNK]
        out[start:start + chunk.size] = spectral_integral(
            bath, lambda omega, c=chunk: np.exp(-1j * np.outer(c, omega))
        )
    if np.ndim(t) == 0:
        return complex(out[0])
    return out.reshape(np.shape(t))


# --------------------------------------------------------------------------- #
# Coefficient cases
# --------------------------------------------------------------------------- #


class EtaCase(str, enum.Enum):
    INTERIOR = "interior"  # 0 < j' < j < N
    DIAGONAL = "diagonal"  # 0 < j' = j < N
    ORIGIN = "origin"  # j' = j = 0
    ENDPOINT = "endpoint"  # j' = j = N
    INITIAL_COLUMN = "initial_column"  # 0 = j' < j < N
    FINAL_ROW = "final_row"  # 0 < j' < j = N
    CORNER = "corner"  # 0 = j' < j = N


def eta_case(j: int, jp: int, n_steps: int) -> EtaCase:
    """Case of a general-bath coefficient on the half-cell boundary grid."""
    if n_steps < 1:
        raise DomainError(f"N must be at least 1, got {n_steps}")
    if not 0 <= jp <= j <= n_steps:
        raise DomainError(f"indices must satisfy 0 <= j' <= j <= N, got j={j}, j'={jp}, N={n_steps}")
    if j == jp:
        if j == 0:
            return EtaCase.ORIGIN
        return EtaCase.ENDPOINT if j == n_steps else EtaCase.DIAGONAL
    if jp == 0:
        return EtaCase.CORNER if j == n_steps else EtaCase.INITIAL_COLUMN
    return EtaCase.FINAL_ROW if j == n_steps else EtaCase.INTERIOR


def _case_kernel(case: EtaCase, lag: int, dt: float) -> Kernel:
    lags = np.array([float(lag)])
    if case in (EtaCase.ORIGIN, EtaCase.ENDPOINT):
        return _same_cell_kernel(dt / 2.0)
    if case is EtaCase.DIAGONAL:
        return _same_cell_kernel(dt)
    if case in (EtaCase.INITIAL_COLUMN, EtaCase.FINAL_ROW):
        return _edge_cells_kernel(dt, lags)
    if case is EtaCase.CORNER:
        return _corner_cells_kernel(dt, lags)
    return _full_cells_kernel(dt, lags)


def _check_step(dt: float) -> None:
    if not dt > 0:
        raise DomainError(f"time step must be positive, got {dt}")


def eta_general(bath: BathSpec, j: int, jp: int, n_steps: int, dt: float) -> complex:
    if bath.axis is not Axis.Z:
        raise DomainError("general-bath coefficients need a z-coupled bath")
    _check_step(dt)
    case = eta_case(j, jp, n_steps)
    return complex(spectral_integral(bath, _case_kernel(case, j - jp, dt))[0])


def eta_dephasing(bath: BathSpec, j: int, jp: int, dt: float) -> complex:
    """Coefficient of the x-coupled bath; cells are [j dt, (j + 1) dt]."""
    if bath.axis is not Axis.X:
        raise DomainError("dephasing coefficients need an x-coupled bath")
    _check_step(dt)
    if not 0 <= jp <= j:
        raise DomainError(f"indices must satisfy 0 <= j' <= j, got j={j}, j'={jp}")
    case = EtaCase.DIAGONAL if j == jp else EtaCase.INTERIOR
    return complex(spectral_integral(bath, _case_kernel(case, j - jp, dt))[0])


# --------------------------------------------------------------------------- #
# Tables
# --------------------------------------------------------------------------- #


@dataclass(frozen=True, eq=False)
class EtaTable:
    """Lag-indexed influence coefficients for one bath on an N-step grid.

    ``full``, ``edge`` and ``corner`` are indexed by lag 0..N (index 0 unused).
    Z tables cover 0 <= j' <= j <= N, X tables 0 <= j' <= j <= N - 1.
    In a truncated table the lag-``mem_steps`` cells integrate C only up to
    the memory time and every longer lag is zero.
    """

    axis: Axis
    n_steps: int
    dt: float
    mem_steps: int
    same_cell: complex
    half_cell: complex
    full: np.ndarray
    edge: np.ndarray
    corner: np.ndarray
    bath: Optional[BathSpec] = None

    @property
    def last_row(self) -> int:
        return self.n_steps if self.axis is Axis.Z else self.n_steps - 1

    def case(self, j: int, jp: int) -> EtaCase:
        if self.axis is Axis.Z:
            return eta_case(j, jp, self.n_steps)
        if not 0 <= jp <= j <= self.last_row:
            raise DomainError(f"indices must satisfy 0 <= j' <= j <= N-1, got j={j}, j'={jp}")
        return EtaCase.DIAGONAL if j == jp else EtaCase.INTERIOR

    def value(self, j: int, jp: int) -> complex:
        case = self.case(j, jp)
        lag = j - jp
        if lag > self.mem_steps:
            return 0j
        if case in (EtaCase.ORIGIN, EtaCase.ENDPOINT):
            return self.half_cell
        if case is EtaCase.DIAGONAL:
            return self.same_cell
        if case in (EtaCase.INITIAL_COLUMN, EtaCase.FINAL_ROW):
            return complex(self.edge[lag])
        if case is EtaCase.CORNER:
            return complex(self.corner[lag])
        return complex(self.full[lag])

    def entries(self) -> Iterator[Tuple[int, int, EtaCase, complex]]:
        for j in range(self.last_row + 1):
            for jp in range(j + 1):
                yield j, jp, self.case(j, jp), self.value(j, jp)

    def full_row(self, j: int) -> np.ndarray:
        """Coefficients by lag for point j as an interior (non-final) point."""
        if j < 0 or j > self.n_steps:
            raise DomainError(f"row {j} outside 0..{self.n_steps}")
        depth = min(j, self.mem_steps)
        row = np.array(self.full[:depth + 1], dtype=complex)
        if self.axis is Axis.Z:
            row[0] = self.half_cell if j == 0 else self.same_cell
            if 0 < j <= depth:
                row[j] = self.edge[j]
        else:
            row[0] = self.same_cell
        return row

    def terminal_row(self, j: int) -> np.ndarray:
        """Coefficients by lag for point j as the final grid point (z tables only)."""
        if self.axis is not Axis.Z:
            raise DomainError("terminal rows exist only for z tables")
        if j < 0 or j > self.n_steps:
            raise DomainError(f"row {j} outside 0..{self.n_steps}")
        if j == 0:
            return np.zeros(1, dtype=complex)
        depth = min(j, self.mem_steps)
        row = np.array(self.edge[:depth + 1], dtype=complex)
        row[0] = self.half_cell
        if j <= depth:
            row[j] = self.corner[j]
        return row

    def total(self, n: int) -> complex:
        """Discrete L at n steps: the sum of all coefficients of an n-step grid."""
        if n < 0 or n > self.n_steps:
            raise DomainError(f"step {n} outside 0..{self.n_steps}")
        if n == 0:
            return 0j
        acc = 0j
        for j in range(n):
            acc += complex(np.sum(self.full_row(j)))
        if self.axis is Axis.Z:
            acc += complex(np.sum(self.terminal_row(n)))
        return acc


@lru_cache(maxsize=32)
def build_eta_table(bath: BathSpec, dt: float, n_steps: int) -> EtaTable:
    _check_step(dt)
    if n_steps < 1:
        raise DomainError(f"N must be at least 1, got {n_steps}")
    logger.debug("Building %s table: dt=%g, N=%d, gamma=%g", bath.axis.value, dt, n_steps, bath.coupling)
    full = _lag_integrals(bath, lambda lags: _full_cells_kernel(dt, lags), n_steps)
    same_cell = complex(spectral_integral(bath, _same_cell_kernel(dt))[0])
    zeros = np.zeros(n_steps + 1, dtype=complex)
    if bath.axis is Axis.Z:
        edge = _lag_integrals(bath, lambda lags: _edge_cells_kernel(dt, lags), n_steps)
        corner = _lag_integrals(bath, lambda lags: _corner_cells_kernel(dt, lags), n_steps)
        half_cell = complex(spectral_integral(bath, _same_cell_kernel(dt / 2.0))[0])
    else:
        edge, corner, half_cell = zeros, zeros.copy(), 0j
    for arr in (full, edge, corner):
        arr.setflags(write=False)
    return EtaTable(
        axis=bath.axis,
        n_steps=n_steps,
        dt=dt,
        mem_steps=n_steps,
        same_cell=same_cell,
        half_cell=half_cell,
        full=full,
        edge=edge,
        corner=corner,
        bath=bath,
    )


def memory_steps(t_mem: float, dt: float) -> int:
    return int(math.floor(t_mem / dt + TRUNCATION_SLACK))


def truncate_eta(table: EtaTable, t_mem: float) -> EtaTable:
    """Table of the correlation function cut to zero past ``mem * dt``.

    ``t_mem`` is rounded down to the grid. Lags below ``mem`` are unchanged,
    the lag-``mem`` full and edge cells keep only their part with
    tau - s <= mem * dt (corner cells lie inside already) and longer lags vanish.
    """
    if not t_mem > 0:
        raise DomainError(f"memory time must be positive, got {t_mem}")
    if t_mem > table.n_steps * table.dt * (1.0 + TRUNCATION_SLACK):
        raise DomainError(f"memory time {t_mem} exceeds the grid length {table.n_steps * table.dt}")
    mem = memory_steps(t_mem, table.dt)
    if mem < 1:
        raise DomainError(f"memory time {t_mem} is shorter than one step of {table.dt}")
    source = table
    if table.mem_steps < table.n_steps:
        if table.bath is None:
            raise DomainError("re-truncating a table needs the bath it was built from")
        source = build_eta_table(table.bath, table.dt, table.n_steps)
    if mem >= source.n_steps:
        return source
    if source.bath is None:
        raise DomainError("truncation needs the bath the table was built from")

    def cut(values: np.ndarray, boundary: Optional[complex] = None) -> np.ndarray:
        out = np.array(values, dtype=complex)
        out[mem + 1:] = 0.0
        if boundary is not None:
            out[mem] = boundary
        out.setflags(write=False)
        return out

    bath, dt = source.bath, source.dt
    full = cut(source.full, complex(spectral_integral(bath, _cut_full_kernel(dt, mem))[0]))
    if source.axis is Axis.Z:
        edge = cut(source.edge, complex(spectral_integral(bath, _cut_edge_kernel(dt, mem))[0]))
    else:
        edge = cut(source.edge)
    logger.debug("Truncated %s table at %d steps", source.axis.value, mem)
    return replace(source, mem_steps=mem, full=full, edge=edge, corner=cut(source.corner))


# --------------------------------------------------------------------------- #
# L(t)
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class LDiagnostic:
    t: float
    value: complex
    derivative: complex


def l_derivative(bath: BathSpec, t: float) -> complex:
    """int_0^t C(u) du."""
    if t < 0:
        raise DomainError(f"time must be non-negative, got {t}")
    if t == 0:
        return 0j
    return complex(spectral_integral(bath, _running_integral_kernel(t))[0])


def grid_steps(t: float, dt: float) -> int:
    _check_step(dt)
    n = int(round(t / dt))
    if abs(n * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise DomainError(f"time {t} is not a multiple of dt={dt}")
    return n


def l_of_t(
    bath: BathSpec,
    t: float,
    mode: LMode = LMode.CONTINUOUS_QUADRATURE,
    dt: Optional[float] = None,
) -> LDiagnostic:
    if t < 0:
        raise DomainError(f"time must be non-negative, got {t}")
    if t == 0:
        return LDiagnostic(t=0.0, value=0j, derivative=0j)
    derivative = l_derivative(bath, t)
    if LMode(mode) is LMode.DISCRETE_SUM:
        if dt is None:
            raise DomainError("discrete-sum mode needs the time step")
        n = grid_steps(t, dt)
        value = build_eta_table(bath, dt, n).total(n)
    else:
        value = complex(spectral_integral(bath, _same_cell_kernel(t))[0])
    return LDiagnostic(t=t, value=value, derivative=derivative)
