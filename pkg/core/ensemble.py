"""Hash-keyed path ensembles.

A path coordinate is the pair (sigma+, sigma-) of forward and backward
eigenvalues at one time point, coded as 2 * b+ + b- with b = 0 for +1 and
b = 1 for -1. Histories are stored newest first: column l holds lag l.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from core.bath import EtaTable
from core.models import Axis, DomainError, ResourceLimitError

logger = logging.getLogger(__name__)

SIGMA_PLUS = np.array([1.0, 1.0, -1.0, -1.0])
SIGMA_MINUS = np.array([1.0, -1.0, 1.0, -1.0])
CODES_PER_WORD = 32
KEY_WORD_BYTES = 8
COORDINATE_BYTES = 1
AMPLITUDE_BYTES = 16
MIRROR_CODES = np.array([0, 2, 1, 3], dtype=np.uint8)


class EnsembleBudgetError(ResourceLimitError):
    """Spawning the next step would exceed the path budget."""

    def __init__(self, step: int, requested: int, limit: int):
        super().__init__(f"step {step} would hold {requested} paths, above the budget of {limit}")
        self.step = step
        self.requested = requested
        self.limit = limit


class InfluenceHistoryError(RuntimeError):
    """A path history is shorter than the influence row applied to it."""


def encode_pair(sigma_plus: int, sigma_minus: int) -> int:
    for sigma in (sigma_plus, sigma_minus):
        if sigma not in (1, -1):
            raise DomainError(f"eigenvalue must be +1 or -1, got {sigma}")
    return 2 * int(sigma_plus == -1) + int(sigma_minus == -1)


def decode_pair(code: int) -> Tuple[int, int]:
    return int(SIGMA_PLUS[code]), int(SIGMA_MINUS[code])


@dataclass(frozen=True)
class Mask:
    """Lags whose coordinates define path identity for one bath."""

    lags: Tuple[int, ...]
    axis: Axis = Axis.Z

    def __post_init__(self) -> None:
        lags = tuple(int(lag) for lag in self.lags)
        if not lags or lags[0] != 0:
            raise DomainError(f"mask must contain lag 0, got {list(lags)}")
        if any(b <= a for a, b in zip(lags, lags[1:])):
            raise DomainError(f"mask lags must be strictly increasing, got {list(lags)}")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "axis", Axis(self.axis))

    @classmethod
    def uniform(cls, size: int, axis: Axis = Axis.Z) -> "Mask":
        return cls(tuple(range(size)), axis)

    def __len__(self) -> int:
        return len(self.lags)

    def validate_window(self, window: int) -> None:
        if self.lags[-1] >= window:
            raise DomainError(f"{self.axis.value} mask lag {self.lags[-1]} outside memory window of {window} steps")


def pack_codes(columns: np.ndarray) -> np.ndarray:
    """Pack (n, m) coordinate codes into (n, words) uint64, first column most significant."""
    n, m = columns.shape
    words = max(1, -(-m // CODES_PER_WORD))
    out = np.zeros((n, words), dtype=np.uint64)
    for i in range(m):
        word, pos = divmod(i, CODES_PER_WORD)
        shift = np.uint64(2 * (CODES_PER_WORD - 1 - pos))
        out[:, word] |= columns[:, i].astype(np.uint64) << shift
    return out


def _mask_columns(history: np.ndarray, mask: Optional[Mask], depth: int) -> np.ndarray:
    lags = range(depth) if mask is None else mask.lags
    n, width = history.shape
    cols = np.zeros((n, len(lags)), dtype=np.uint8)
    for i, lag in enumerate(lags):
        if lag < width:
            cols[:, i] = history[:, lag]
    return cols


def encode_keys(
    z_history: np.ndarray,
    x_history: np.ndarray,
    mask_z: Optional[Mask],
    mask_x: Optional[Mask],
    depth_z: int,
    depth_x: int,
) -> np.ndarray:
    """Mask keys: z lags then x lags; lags not yet reached encode as 0."""
    columns = np.concatenate(
        [_mask_columns(z_history, mask_z, depth_z), _mask_columns(x_history, mask_x, depth_x)], axis=1
    )
    return pack_codes(columns)


@dataclass(eq=False)
class PathEnsemble:
    """Struct-of-arrays ensemble; ``amplitudes`` carry the stored influence,
    ``readout`` the amplitude the density matrix is read from."""

    step: int
    z_history: np.ndarray
    x_history: np.ndarray
    amplitudes: np.ndarray
    readout: np.ndarray
    keys: np.ndarray

    def __len__(self) -> int:
        return int(self.amplitudes.size)

    def take(self, index: np.ndarray) -> "PathEnsemble":
        return PathEnsemble(
            step=self.step,
            z_history=self.z_history[index],
            x_history=self.x_history[index],
            amplitudes=self.amplitudes[index],
            readout=self.readout[index],
            keys=self.keys[index],
        )

    def memory_bytes(self) -> int:
        per_path = (
            KEY_WORD_BYTES * self.keys.shape[1]
            + COORDINATE_BYTES * (self.z_history.shape[1] + self.x_history.shape[1])
            + AMPLITUDE_BYTES
        )
        return len(self) * per_path

    @classmethod
    def concatenate(cls, parts: Sequence["PathEnsemble"]) -> "PathEnsemble":
        return cls(
            step=parts[0].step,
            z_history=np.concatenate([p.z_history for p in parts]),
            x_history=np.concatenate([p.x_history for p in parts]),
            amplitudes=np.concatenate([p.amplitudes for p in parts]),
            readout=np.concatenate([p.readout for p in parts]),
            keys=np.concatenate([p.keys for p in parts]),
        )


def mirror_codes(codes: np.ndarray) -> np.ndarray:
    """Swap forward and backward eigenvalues: codes 1 and 2 trade places."""
    return MIRROR_CODES[codes]


def _mirror_canonical(codes: np.ndarray) -> np.ndarray:
    # a history and its mirror map to the same array
    if codes.shape[1] == 0:
        return codes
    off_diagonal = (codes == 1) | (codes == 2)
    first = np.argmax(off_diagonal, axis=1)
    leading = codes[np.arange(codes.shape[0]), first]
    flip = off_diagonal.any(axis=1) & (leading == 2)
    canonical = codes.copy()
    canonical[flip] = mirror_codes(codes[flip])
    return canonical


def merge_by_mask(ensemble: PathEnsemble) -> PathEnsemble:
    """Sum paths sharing a key into one representative.

    The representative history is that of the member with the largest
    |amplitude|. Ties go to the smallest mirror-canonical history, then to
    the smallest history, so a key and its mirrored key pick mirrored
    representatives and sum their members in mirrored order.
    """
    n = len(ensemble)
    if n < 2:
        return ensemble
    codes = np.concatenate([ensemble.z_history, ensemble.x_history], axis=1)
    history = pack_codes(codes)
    canonical = pack_codes(_mirror_canonical(codes))
    keys = ensemble.keys
    # np.lexsort sorts by the last key first
    sort_keys = (
        tuple(history[:, w] for w in reversed(range(history.shape[1])))
        + tuple(canonical[:, w] for w in reversed(range(canonical.shape[1])))
        + (-np.abs(ensemble.amplitudes),)
        + tuple(keys[:, w] for w in reversed(range(keys.shape[1])))
    )
    order = np.lexsort(sort_keys)
    sorted_keys = keys[order]
    starts_mask = np.ones(n, dtype=bool)
    starts_mask[1:] = np.any(sorted_keys[1:] != sorted_keys[:-1], axis=1)
    starts = np.flatnonzero(starts_mask)
    if starts.size == n:
        return ensemble
    merged = ensemble.take(order[starts])
    merged.amplitudes = np.add.reduceat(ensemble.amplitudes[order], starts)
    merged.readout = np.add.reduceat(ensemble.readout[order], starts)
    return merged


def drop_exact_zeros(ensemble: PathEnsemble) -> Tuple[PathEnsemble, int]:
    keep = (ensemble.amplitudes != 0) | (ensemble.readout != 0)
    dropped = int(keep.size - np.count_nonzero(keep))
    return (ensemble if dropped == 0 else ensemble.take(np.flatnonzero(keep))), dropped


def filter_paths(ensemble: PathEnsemble, theta: float) -> Tuple[PathEnsemble, int]:
    if theta < 0:
        raise DomainError(f"filter threshold must be non-negative, got {theta}")
    if theta == 0:
        return drop_exact_zeros(ensemble)
    keep = np.abs(ensemble.amplitudes) >= theta
    dropped = int(keep.size - np.count_nonzero(keep))
    return (ensemble if dropped == 0 else ensemble.take(np.flatnonzero(keep))), dropped


def drop_smallest(ensemble: PathEnsemble, fraction: float) -> Tuple[PathEnsemble, int]:
    """Remove the lowest ``fraction`` of paths by |amplitude|."""
    if not 0 <= fraction < 1:
        raise DomainError(f"drop fraction must lie in [0, 1), got {fraction}")
    count = int(np.floor(fraction * len(ensemble)))
    if count == 0:
        return ensemble, 0
    order = np.argsort(np.abs(ensemble.amplitudes), kind="stable")
    keep = np.sort(order[count:])
    return ensemble.take(keep), count


# --------------------------------------------------------------------------- #
# Influence weights
# --------------------------------------------------------------------------- #


def _as_history(history: Iterable[int] | np.ndarray) -> np.ndarray:
    arr = np.asarray(history, dtype=np.uint8)
    return arr[None, :] if arr.ndim == 1 else arr


def row_exponent(history: np.ndarray, row: np.ndarray) -> np.ndarray:
    """(s+_0 - s-_0) * sum_l (eta_l s+_l - conj(eta_l) s-_l) for each history."""
    history = _as_history(history)
    if history.shape[1] < row.size:
        raise InfluenceHistoryError(f"history covers {history.shape[1]} lags, row needs {row.size}")
    plus = SIGMA_PLUS[history[:, : row.size]]
    minus = SIGMA_MINUS[history[:, : row.size]]
    acc = np.zeros(history.shape[0], dtype=complex)
    # lag by lag so the result does not depend on how the ensemble is chunked
    for lag in range(row.size):
        if row[lag] != 0:
            acc += plus[:, lag] * row[lag] - minus[:, lag] * np.conj(row[lag])
    return (plus[:, 0] - minus[:, 0]) * acc


def _check_axis(table: EtaTable, bath_axis: Axis) -> None:
    if table.axis is not Axis(bath_axis):
        raise DomainError(f"{Axis(bath_axis).value} history paired with a {table.axis.value} table")


def influence_weight(
    history: Iterable[int] | np.ndarray,
    table: EtaTable,
    bath_axis: Axis,
    current_step: int,
    extended: bool = False,
) -> np.ndarray:
    """Weight of the newest point against its retained past."""
    _check_axis(table, bath_axis)
    if extended and table.mem_steps < current_step:
        raise DomainError("extended memory needs an untruncated table")
    return np.exp(-row_exponent(_as_history(history), table.full_row(current_step)))


def readout_weight(
    history: Iterable[int] | np.ndarray,
    table: EtaTable,
    current_step: int,
    exclude_current: bool = False,
) -> np.ndarray:
    """Factor taking a stored amplitude to the amplitude read out at ``current_step``.

    For z tables the newest point is the final grid point; for x tables the
    newest point's row is either kept or, with ``exclude_current``, removed.
    """
    history = _as_history(history)
    if table.axis is Axis.Z:
        row = table.terminal_row(current_step) - table.full_row(current_step)
        return np.exp(-row_exponent(history, row))
    if exclude_current:
        return np.exp(row_exponent(history, table.full_row(current_step)))
    return np.ones(history.shape[0], dtype=complex)


def influence_functional(path: Sequence[int], table: EtaTable) -> complex:
    """Whole-path influence functional from the coefficient table.

    ``path`` lists coordinate codes in time order: 0..N for z tables,
    0..N-1 for x tables.
    """
    codes = list(path)
    if len(codes) != table.last_row + 1:
        raise DomainError(f"path of length {len(codes)} does not match a table with rows 0..{table.last_row}")
    exponent = 0j
    for j, code in enumerate(codes):
        plus_j, minus_j = decode_pair(code)
        if plus_j == minus_j:
            continue
        for jp in range(j + 1):
            plus, minus = decode_pair(codes[jp])
            eta = table.value(j, jp)
            exponent += (plus_j - minus_j) * (eta * plus - np.conj(eta) * minus)
    return complex(np.exp(-exponent))
