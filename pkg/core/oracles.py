"""Closed-form pure-dephasing solutions.

With the bath coupled through sigma_x, which also diagonalises H_S, only
constant paths in the sigma_x basis contribute. Each element of rho in that
basis rotates with its energy difference and decays with L(t).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from core.bath import BathSpec, build_eta_table, grid_steps, l_derivative, l_of_t, truncate_eta
from core.models import Axis, DensityMatrix, DomainError, LMode
from core.tls import TwoLevelSystem, from_x_basis, to_x_basis

logger = logging.getLogger(__name__)

EIGENVALUES = (1, -1)


def decay_factor(plus: int, minus: int, l_value: complex) -> float:
    return float(np.exp(-((plus - minus) ** 2) * l_value.real))


def renormalization_phase(plus: int, minus: int, l_value: complex) -> complex:
    """Phase from Im L; identically 1 for eigenvalues +1 and -1."""
    return complex(np.exp(-1j * (plus * plus - minus * minus) * l_value.imag))


def _evolve(tls: TwoLevelSystem, rho0: DensityMatrix, t: float, l_value: complex) -> DensityMatrix:
    rho_x = to_x_basis(rho0)
    out = np.zeros((2, 2), dtype=complex)
    for a, plus in enumerate(EIGENVALUES):
        for b, minus in enumerate(EIGENVALUES):
            rotation = np.exp(-1j * (tls.energy(plus) - tls.energy(minus)) * t)
            out[a, b] = (
                rho_x[a, b] * rotation * decay_factor(plus, minus, l_value) * renormalization_phase(plus, minus, l_value)
            )
    return from_x_basis(out)


def _check_bath(bath: BathSpec) -> None:
    if bath.axis is not Axis.X:
        raise DomainError("pure-dephasing solutions need an x-coupled bath")


def analytic_dephasing(
    bath: BathSpec,
    tls: TwoLevelSystem,
    rho0: DensityMatrix,
    t: float,
    l_mode: LMode = LMode.DISCRETE_SUM,
    dt: Optional[float] = None,
) -> DensityMatrix:
    _check_bath(bath)
    if t < 0:
        raise DomainError(f"time must be non-negative, got {t}")
    l_value = l_of_t(bath, t, LMode(l_mode), dt).value
    return _evolve(tls, rho0, t, l_value)


def truncated_l(
    bath: BathSpec,
    t: float,
    t_mem: float,
    l_mode: LMode = LMode.CONTINUOUS_QUADRATURE,
    dt: Optional[float] = None,
) -> complex:
    """L(t) with the correlation function cut at t_mem, for t >= t_mem."""
    if t_mem <= 0:
        raise DomainError(f"memory time must be positive, got {t_mem}")
    if t < t_mem:
        raise DomainError(f"time {t} precedes the memory time {t_mem}")
    if LMode(l_mode) is LMode.DISCRETE_SUM:
        if dt is None:
            raise DomainError("discrete-sum mode needs the time step")
        n = grid_steps(t, dt)
        table = truncate_eta(build_eta_table(bath, dt, n), t_mem)
        return table.total(n)
    at_mem = l_of_t(bath, t_mem)
    return at_mem.value + at_mem.derivative * (t - t_mem)


def analytic_truncated_dephasing(
    bath: BathSpec,
    tls: TwoLevelSystem,
    rho0: DensityMatrix,
    t: float,
    t_mem: float,
    l_mode: LMode = LMode.CONTINUOUS_QUADRATURE,
    dt: Optional[float] = None,
) -> DensityMatrix:
    _check_bath(bath)
    return _evolve(tls, rho0, t, truncated_l(bath, t, t_mem, l_mode, dt))


def spurious_rate(bath: BathSpec, t_mem: float) -> float:
    """Decay rate of the x-basis coherence past a sharp cut at t_mem: 4 Re L'(t_mem)."""
    return 4.0 * l_derivative(bath, t_mem).real


@dataclass(frozen=True, eq=False)
class DephasingSolution:
    times: np.ndarray
    rho: List[DensityMatrix]

    def coherences(self) -> np.ndarray:
        return np.array([r.coherence() for r in self.rho])

    def elements(self) -> np.ndarray:
        return np.stack([r.elements for r in self.rho])


def dephasing_trajectory(
    bath: BathSpec,
    tls: TwoLevelSystem,
    rho0: DensityMatrix,
    dt: float,
    n_steps: int,
    t_mem: Optional[float] = None,
) -> DephasingSolution:
    """Discrete-sum solution on the grid 0, dt, ..., N dt, optionally truncated."""
    _check_bath(bath)
    table = build_eta_table(bath, dt, n_steps)
    if t_mem is not None:
        table = truncate_eta(table, t_mem)
    times = dt * np.arange(n_steps + 1)
    rho = [_evolve(tls, rho0, float(t), table.total(n)) for n, t in enumerate(times)]
    return DephasingSolution(times=times, rho=rho)
