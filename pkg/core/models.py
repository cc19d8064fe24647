from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, TypedDict, Union

import numpy as np


class DomainError(ValueError):
    """Argument outside the domain of an operation."""


class ResourceLimitError(RuntimeError):
    """A configured resource budget was exceeded."""


class Axis(str, enum.Enum):
    X = "x"
    Z = "z"


class Direction(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


class LMode(str, enum.Enum):
    DISCRETE_SUM = "discrete_sum"
    CONTINUOUS_QUADRATURE = "continuous_quadrature"


ComplexLike = Union[complex, float, str]

STATE_LABELS = {
    "z+": [[1.0, 0.0], [0.0, 0.0]],
    "z-": [[0.0, 0.0], [0.0, 1.0]],
    "x+": [[0.5, 0.5], [0.5, 0.5]],
    "x-": [[0.5, -0.5], [-0.5, 0.5]],
}


def x_coherence(elements: np.ndarray) -> np.ndarray:
    """Off-diagonal <x+|rho|x-> for one (2, 2) or many (n, 2, 2) sigma_z-basis matrices."""
    rho = np.asarray(elements)
    return 0.5 * (rho[..., 0, 0] - rho[..., 0, 1] + rho[..., 1, 0] - rho[..., 1, 1])


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """2x2 reduced density matrix in the sigma_z eigenbasis.

    Row/column 0 is sigma_z = +1, row/column 1 is sigma_z = -1.
    """

    elements: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.elements, dtype=complex)
        if arr.shape != (2, 2):
            raise DomainError(f"density matrix must be 2x2, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "elements", arr)

    @classmethod
    def from_label(cls, label: str) -> "DensityMatrix":
        try:
            return cls(np.array(STATE_LABELS[label], dtype=complex))
        except KeyError as exc:
            raise DomainError(f"unknown state label {label!r}; expected one of {sorted(STATE_LABELS)}") from exc

    def trace(self) -> complex:
        return complex(np.trace(self.elements))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.elements - self.elements.conj().T)))

    def sigma_z(self) -> float:
        return float((self.elements[0, 0] - self.elements[1, 1]).real)

    def sigma_x(self) -> float:
        return float(2.0 * self.elements[0, 1].real)

    def coherence(self) -> complex:
        return complex(x_coherence(self.elements))

    def scaled(self, factor: float) -> "DensityMatrix":
        return DensityMatrix(self.elements * factor)


OBSERVABLES = ("sigma_z", "sigma_x", "coherence")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Density matrices on the propagation grid; ``rho`` has shape (n, 2, 2)."""

    times: np.ndarray
    rho: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    def state(self, index: int) -> DensityMatrix:
        return DensityMatrix(self.rho[index])

    def sigma_z(self) -> np.ndarray:
        return (self.rho[:, 0, 0] - self.rho[:, 1, 1]).real

    def sigma_x(self) -> np.ndarray:
        return 2.0 * self.rho[:, 0, 1].real

    def coherences(self) -> np.ndarray:
        return x_coherence(self.rho)

    def traces(self) -> np.ndarray:
        return self.rho[:, 0, 0] + self.rho[:, 1, 1]

    def norms(self) -> np.ndarray:
        return np.abs(self.traces())

    def hermiticity_errors(self) -> np.ndarray:
        return np.max(np.abs(self.rho - np.conj(np.swapaxes(self.rho, 1, 2))), axis=(1, 2))

    def observable(self, name: str) -> np.ndarray:
        if name == "sigma_z":
            return self.sigma_z()
        if name == "sigma_x":
            return self.sigma_x()
        if name == "coherence":
            return np.abs(self.coherences())
        raise DomainError(f"unknown observable {name!r}; expected one of {OBSERVABLES}")


@dataclass
class RunStats:
    path_counts: List[int] = field(default_factory=list)
    premerge_counts: List[int] = field(default_factory=list)
    dropped_counts: List[int] = field(default_factory=list)
    mem_bytes: List[int] = field(default_factory=list)
    min_amplitudes: List[float] = field(default_factory=list)
    max_amplitudes: List[float] = field(default_factory=list)
    path_bound: Optional[int] = None
    final_norm: float = 1.0
    path_fraction: float = 1.0

    @property
    def peak_paths(self) -> int:
        return max(self.path_counts, default=0)

    @property
    def mean_paths(self) -> float:
        return float(np.mean(self.path_counts)) if self.path_counts else 0.0

    @property
    def peak_mem_bytes(self) -> int:
        return max(self.mem_bytes, default=0)

    @property
    def mean_mem_bytes(self) -> float:
        return float(np.mean(self.mem_bytes)) if self.mem_bytes else 0.0

    @property
    def dropped_total(self) -> int:
        return int(sum(self.dropped_counts))

    @property
    def plateau_step(self) -> Optional[int]:
        """First step from which the path count no longer changes."""
        if not self.path_counts:
            return None
        last = self.path_counts[-1]
        step = len(self.path_counts) - 1
        while step > 0 and self.path_counts[step - 1] == last:
            step -= 1
        return step


class RunResult(NamedTuple):
    trajectory: Trajectory
    stats: RunStats


# --------------------------------------------------------------------------- #
# Report records
# --------------------------------------------------------------------------- #


class MaskSearchEntry(TypedDict):
    mask_x: List[int]
    mask_z: List[int]
    rms: float
    n_paths: int
    label: str


class FilterSweepEntry(TypedDict, total=False):
    theta: float
    final_norm: float
    path_fraction: float
    dropped_total: int
    peak_paths: int
    min_amplitude: float


class MemorySweepEntry(TypedDict, total=False):
    t_mem: Optional[float]
    mem_steps: Optional[int]
    benchmark: bool
    rms: float
    frequency: Optional[float]
    envelope_rate: Optional[float]
    mean_paths: float
    peak_paths: int
    mean_mem_bytes: float
    peak_mem_bytes: int
    fitted_rate: Optional[float]
    predicted_rate: Optional[float]


class ConvergenceEntry(TypedDict, total=False):
    dt: float
    mem_steps: int
    t_mem: float
    rms_to_previous: Optional[float]
    rms_to_reference: Optional[float]
    peak_paths: int


class RunIndexEntry(TypedDict, total=False):
    id: str
    kind: str
    status: str
    created_at: str
    files: List[str]
