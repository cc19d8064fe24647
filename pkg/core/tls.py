"""Two-level-system algebra: eigenbases, segment propagators and basis changes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from core.models import Axis, DensityMatrix, Direction, DomainError

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

Pair = Tuple[int, int]


def state_index(sigma: int) -> int:
    """Row index of eigenvalue sigma: 0 for +1, 1 for -1."""
    if sigma == 1:
        return 0
    if sigma == -1:
        return 1
    raise DomainError(f"eigenvalue must be +1 or -1, got {sigma}")


@dataclass(frozen=True)
class TwoLevelSystem:
    """H_S = (tunneling / 2) * sigma_x."""

    tunneling: float = 1.0

    def __post_init__(self) -> None:
        if not self.tunneling > 0:
            raise DomainError(f"tunneling amplitude must be positive, got {self.tunneling}")

    def energy(self, sigma_x: int) -> float:
        state_index(sigma_x)
        return 0.5 * self.tunneling * sigma_x

    def propagator(self, dt: float) -> np.ndarray:
        """exp(-i H_S dt) in the sigma_z basis."""
        angle = 0.5 * self.tunneling * dt
        return math.cos(angle) * IDENTITY - 1j * math.sin(angle) * SIGMA_X


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """Columns of ``vectors`` are the eigenvectors for +1 and -1."""

    axis: Axis
    vectors: np.ndarray

    def vector(self, sigma: int) -> np.ndarray:
        return self.vectors[:, state_index(sigma)]

    def overlap(self, sigma: int, other: "EigenBasis", sigma_other: int) -> complex:
        """<self, sigma | other, sigma_other>."""
        return complex(np.vdot(self.vector(sigma), other.vector(sigma_other)))


Z_BASIS = EigenBasis(Axis.Z, np.eye(2, dtype=complex))
X_BASIS = EigenBasis(Axis.X, np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / math.sqrt(2.0))


def eigenbasis(axis: Axis) -> EigenBasis:
    return Z_BASIS if Axis(axis) is Axis.Z else X_BASIS


def _check_step(dt: float) -> None:
    if not dt > 0:
        raise DomainError(f"time step must be positive, got {dt}")


def segment_propagator_general(
    tls: TwoLevelSystem,
    dt: float,
    s_to: int,
    s_from: int,
    direction: Direction = Direction.FORWARD,
) -> complex:
    """<s_to| exp(-/+ i H_S dt) |s_from> in the sigma_z basis."""
    _check_step(dt)
    u = tls.propagator(dt)
    if Direction(direction) is Direction.BACKWARD:
        u = u.conj().T
    return complex(u[state_index(s_to), state_index(s_from)])


def segment_propagator_dephasing(tls: TwoLevelSystem, dt: float, x_to: Pair, x_from: Pair) -> complex:
    """Forward times backward segment in the sigma_x eigenbasis, where H_S is diagonal."""
    _check_step(dt)
    if x_to != x_from:
        for sigma in (*x_to, *x_from):
            state_index(sigma)
        return 0j
    plus, minus = x_to
    return complex(np.exp(-1j * (tls.energy(plus) - tls.energy(minus)) * dt))


def segment_propagator_xz(tls: TwoLevelSystem, dt: float, z_to: Pair, x_mid: Pair, z_from: Pair) -> complex:
    """One step z_from -> x_mid -> z_to for both branches of the density matrix."""
    _check_step(dt)
    x_plus, x_minus = x_mid
    forward = (
        Z_BASIS.overlap(z_to[0], X_BASIS, x_plus)
        * np.exp(-1j * tls.energy(x_plus) * dt)
        * X_BASIS.overlap(x_plus, Z_BASIS, z_from[0])
    )
    backward = (
        Z_BASIS.overlap(z_from[1], X_BASIS, x_minus)
        * np.exp(1j * tls.energy(x_minus) * dt)
        * X_BASIS.overlap(x_minus, Z_BASIS, z_to[1])
    )
    return complex(forward * backward)


def norm(rho: DensityMatrix) -> float:
    """|Tr rho|."""
    return abs(rho.trace())


def to_x_basis(rho: DensityMatrix) -> np.ndarray:
    v = X_BASIS.vectors
    return v.conj().T @ rho.elements @ v


def from_x_basis(elements: np.ndarray) -> DensityMatrix:
    v = X_BASIS.vectors
    return DensityMatrix(v @ np.asarray(elements, dtype=complex) @ v.conj().T)
