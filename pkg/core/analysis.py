"""Trajectory comparison, oscillation and decay fits, mask classification."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import find_peaks

from core.models import DomainError

LABEL_OPTIMAL = "optimal"
LABEL_GOOD = "good"
LABEL_UNSATISFACTORY = "unsatisfactory"


def rms_distance(values: np.ndarray, reference: np.ndarray) -> float:
    a = np.asarray(values, dtype=float)
    b = np.asarray(reference, dtype=float)
    if a.shape != b.shape:
        raise DomainError(f"cannot compare series of shapes {a.shape} and {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2))) if a.size else 0.0


def rms_on_common_grid(
    times: np.ndarray, values: np.ndarray, ref_times: np.ndarray, ref_values: np.ndarray
) -> float:
    """RMS after interpolating the finer series onto the coarser grid."""
    if len(times) <= len(ref_times):
        coarse_t, coarse_v, fine_t, fine_v = times, values, ref_times, ref_values
    else:
        coarse_t, coarse_v, fine_t, fine_v = ref_times, ref_values, times, values
    end = min(coarse_t[-1], fine_t[-1])
    inside = coarse_t <= end + 1e-12
    return rms_distance(coarse_v[inside], np.interp(coarse_t[inside], fine_t, fine_v))


@dataclass(frozen=True)
class OscillationFit:
    frequency: Optional[float]
    envelope_rate: Optional[float]
    n_peaks: int


def fit_oscillation(times: np.ndarray, signal: np.ndarray) -> OscillationFit:
    """Angular frequency from the spacing of maxima, envelope rate from their log-linear decay."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(signal, dtype=float)
    peaks, _ = find_peaks(y)
    if peaks.size < 2:
        return OscillationFit(frequency=None, envelope_rate=None, n_peaks=int(peaks.size))
    period = float(np.mean(np.diff(t[peaks])))
    frequency = 2.0 * math.pi / period
    heights = y[peaks]
    envelope_rate = None
    if np.all(heights > 0):
        slope, _ = np.polyfit(t[peaks], np.log(heights), 1)
        envelope_rate = float(-slope)
    return OscillationFit(frequency=frequency, envelope_rate=envelope_rate, n_peaks=int(peaks.size))


def fit_decay_rate(times: np.ndarray, values: np.ndarray, window: Tuple[float, float]) -> float:
    """Rate r of |values| ~ exp(-r t) fitted over ``window``."""
    t = np.asarray(times, dtype=float)
    mags = np.abs(np.asarray(values))
    lo, hi = window
    inside = (t >= lo - 1e-12) & (t <= hi + 1e-12) & (mags > 0)
    if np.count_nonzero(inside) < 2:
        raise DomainError(f"fit window {window} holds fewer than two usable points")
    slope, _ = np.polyfit(t[inside], np.log(mags[inside]), 1)
    return float(-slope)


def classify(rms_values: Sequence[float], good_factor: float = 2.0, unsatisfactory_factor: float = 5.0) -> List[str]:
    """Label each distance against the column minimum."""
    if not rms_values:
        return []
    best = min(rms_values)
    labels = []
    for value in rms_values:
        if value == best:
            labels.append(LABEL_OPTIMAL)
        elif value <= good_factor * best:
            labels.append(LABEL_GOOD)
        elif value > unsatisfactory_factor * best:
            labels.append(LABEL_UNSATISFACTORY)
        else:
            labels.append("")
    return labels
