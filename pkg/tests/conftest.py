"""Shared fixtures and independent oracles."""

from __future__ import annotations

from pathlib import Path
from typing import Tuple

import numpy as np
import pytest

from core.bath import BathSpec, SpectralDensity, correlation_function
from core.models import Axis
from core.tls import TwoLevelSystem

GAMMA = 1.0 / 16.0
OMEGA_C = 10.0
BETA = 5.0
DT = 0.3
ORACLE_NODES = 32


def make_bath(axis: Axis, gamma: float = GAMMA, beta: float = BETA, omega_c: float = OMEGA_C) -> BathSpec:
    return BathSpec(SpectralDensity(gamma, omega_c), beta, axis)


@pytest.fixture
def tls() -> TwoLevelSystem:
    return TwoLevelSystem(1.0)


@pytest.fixture
def bath_z() -> BathSpec:
    return make_bath(Axis.Z)


@pytest.fixture
def bath_x() -> BathSpec:
    return make_bath(Axis.X)


def _gauss(lo: float, hi: float, n: int = ORACLE_NODES) -> Tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


def rectangle_integral(bath: BathSpec, tau_cell: Tuple[float, float], s_cell: Tuple[float, float]) -> complex:
    """int over tau in tau_cell, s in s_cell of C(tau - s); the cells must not overlap."""
    tau, wt = _gauss(*tau_cell)
    s, ws = _gauss(*s_cell)
    c = correlation_function(bath, (tau[:, None] - s[None, :]).ravel()).reshape(tau.size, s.size)
    return complex(wt @ c @ ws)


def triangle_integral(bath: BathSpec, start: float, width: float) -> complex:
    """int_{start}^{start+width} dtau int_{start}^{tau} ds C(tau - s), by s = start + (tau - start) v."""
    tau, wt = _gauss(start, start + width)
    v, wv = _gauss(0.0, 1.0)
    span = tau - start
    c = correlation_function(bath, (span[:, None] * (1.0 - v[None, :])).ravel()).reshape(tau.size, v.size)
    return complex(wt @ (span[:, None] * c) @ wv)


def cut_rectangle_integral(
    bath: BathSpec, tau_cell: Tuple[float, float], s_cell: Tuple[float, float], t_mem: float
) -> complex:
    """Like rectangle_integral, keeping only tau - s <= t_mem."""
    a, b = tau_cell
    c, d = s_cell
    breaks = sorted({a, b, *(min(max(edge + t_mem, a), b) for edge in (c, d))})
    v, wv = _gauss(0.0, 1.0)
    total = 0j
    for lo, hi in zip(breaks, breaks[1:]):
        tau, wt = _gauss(lo, hi)
        s_lo = np.maximum(c, tau - t_mem)
        span = np.clip(d - s_lo, 0.0, None)
        s = s_lo[:, None] + span[:, None] * v[None, :]
        u = (tau[:, None] - s).ravel()
        values = correlation_function(bath, u).reshape(tau.size, v.size)
        total += complex(wt @ (span[:, None] * values) @ wv)
    return total


@pytest.fixture
def write_yaml(tmp_path: Path):
    def _write(name: str, text: str) -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write
