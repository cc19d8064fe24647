"""Configuration management."""

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml
from dotenv import load_dotenv

from core.bath import BathSpec, SpectralDensity
from core.engine import DEFAULT_MAX_PATHS, EngineConfig
from core.ensemble import Mask
from core.harness import EXPERIMENT_LABELS, ExperimentConfig
from core.models import OBSERVABLES, STATE_LABELS, Axis, DensityMatrix, DomainError
from core.tls import TwoLevelSystem

# Load .env file if it exists
env_file = Path(__file__).parent.parent / '.env'
if env_file.exists():
    load_dotenv(env_file)

DEFAULT_OUTPUT_DIR = "data/results"


def load_settings() -> Dict[str, Any]:
    """Load runtime settings from config/config.yaml and environment variables."""
    config_file = Path(__file__).parent.parent / 'config' / 'config.yaml'

    if config_file.exists():
        with open(config_file, 'r') as f:
            config = yaml.safe_load(f) or {}
    else:
        config = {}

    settings: Dict[str, Any] = {}
    settings['OUTPUT_DIR'] = os.getenv('QUAPI_OUTPUT_DIR', config.get('output_dir', DEFAULT_OUTPUT_DIR))
    settings['WORKERS'] = int(os.getenv('QUAPI_WORKERS', config.get('workers', 1)))
    settings['MAX_PATHS'] = int(os.getenv('QUAPI_MAX_PATHS', config.get('max_paths', DEFAULT_MAX_PATHS)))
    settings['LOG_LEVEL'] = str(os.getenv('QUAPI_LOG_LEVEL', config.get('log_level', 'INFO'))).upper()
    return settings


@dataclass(frozen=True)
class ConfigIssue:
    path: str
    message: str
    line: Optional[int] = None
    column: Optional[int] = None

    def __str__(self) -> str:
        where = f" (line {self.line}, column {self.column})" if self.line is not None else ""
        return f"{self.path or '<root>'}: {self.message}{where}"


class ConfigValidationError(ValueError):
    """Experiment configuration is malformed or inconsistent."""

    def __init__(self, errors: List[ConfigIssue]):
        super().__init__("; ".join(str(e) for e in errors))
        self.errors = errors


class _Validator:
    """Collects every issue before raising."""

    def __init__(self) -> None:
        self.issues: List[ConfigIssue] = []

    def fail(self, path: str, message: str) -> None:
        """Record an issue and keep validating."""
        self.issues.append(ConfigIssue(path, message))

    def section(self, data: Dict[str, Any], key: str) -> Dict[str, Any]:
        """Get a mapping section, empty if missing."""
        value = data.get(key)
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail(key, "must be a mapping")
            return {}
        return value

    def number(
        self,
        data: Dict[str, Any],
        key: str,
        path: str,
        default: Any = None,
        required: bool = False,
        minimum: Optional[float] = None,
        positive: bool = False,
    ) -> Optional[float]:
        value = data.get(key)
        if value is None:
            if required:
                self.fail(path, "required")
            return default
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            self.fail(path, f"must be a finite number, got {value!r}")
            return default
        if positive and value <= 0:
            self.fail(path, f"must be positive, got {value}")
            return default
        if minimum is not None and value < minimum:
            self.fail(path, f"must be at least {minimum}, got {value}")
            return default
        return float(value)

    def integer(
        self, data: Dict[str, Any], key: str, path: str, default: Any = None, required: bool = False, minimum: int = 1
    ) -> Optional[int]:
        value = data.get(key)
        if value is None:
            if required:
                self.fail(path, "required")
            return default
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(path, f"must be an integer, got {value!r}")
            return default
        if value < minimum:
            self.fail(path, f"must be at least {minimum}, got {value}")
            return default
        return value

    def number_list(self, data: Dict[str, Any], key: str, path: str, required: bool = False) -> List[float]:
        value = data.get(key)
        if value is None:
            if required:
                self.fail(path, "required")
            return []
        if not isinstance(value, list):
            self.fail(path, "must be a list")
            return []
        out = []
        for i, item in enumerate(value):
            if isinstance(item, bool) or not isinstance(item, (int, float)):
                self.fail(f"{path}[{i}]", f"must be a number, got {item!r}")
            else:
                out.append(float(item))
        return out


def _initial_state(v: _Validator, value: Any) -> Optional[DensityMatrix]:
    """Parse a state label or a 2x2 matrix."""
    path = "system.initial_state"
    if value is None:
        return DensityMatrix.from_label("z+")
    if isinstance(value, str):
        if value not in STATE_LABELS:
            v.fail(path, f"unknown label {value!r}; expected one of {sorted(STATE_LABELS)}")
            return None
        return DensityMatrix.from_label(value)
    if not (isinstance(value, list) and len(value) == 2 and all(isinstance(r, list) and len(r) == 2 for r in value)):
        v.fail(path, "must be a state label or a 2x2 matrix")
        return None
    elements = np.zeros((2, 2), dtype=complex)
    for a in range(2):
        for b in range(2):
            entry = value[a][b]
            try:
                elements[a, b] = complex(entry.replace(" ", "")) if isinstance(entry, str) else complex(entry)
            except (TypeError, ValueError):
                v.fail(f"{path}[{a}][{b}]", f"not a number: {entry!r}")
                return None
    rho = DensityMatrix(elements)
    if abs(rho.trace() - 1.0) > 1e-12:
        v.fail(path, f"trace must be 1, got {rho.trace()}")
    if rho.hermiticity_error() > 1e-12:
        v.fail(path, "matrix must be hermitian")
    return rho


def _baths(v: _Validator, data: Dict[str, Any]) -> Dict[Axis, BathSpec]:
    """Parse the x and z bath sections."""
    section = v.section(data, "baths")
    baths: Dict[Axis, BathSpec] = {}
    for key, spec in section.items():
        path = f"baths.{key}"
        if key not in ("x", "z"):
            v.fail(path, "bath axis must be x or z")
            continue
        if not isinstance(spec, dict):
            v.fail(path, "must be a mapping")
            continue
        gamma = v.number(spec, "gamma", f"{path}.gamma", required=True, minimum=0.0)
        omega_c = v.number(spec, "omega_c", f"{path}.omega_c", required=True, positive=True)
        s = v.number(spec, "s", f"{path}.s", default=1.0, positive=True)
        beta = v.number(spec, "beta", f"{path}.beta", required=True, positive=True)
        if None not in (gamma, omega_c, s, beta):
            baths[Axis(key)] = BathSpec(SpectralDensity(gamma, omega_c, s), beta, Axis(key))
    return baths


def _mask(v: _Validator, value: Any, axis: Axis, window: Optional[int]) -> Optional[Mask]:
    """Parse a lag list, checking it against the memory window."""
    path = f"engine.mask_{axis.value}"
    if value is None:
        return None
    if not isinstance(value, list) or not value:
        v.fail(path, "must be a non-empty list of lags")
        return None
    ok = True
    for i, lag in enumerate(value):
        if isinstance(lag, bool) or not isinstance(lag, int) or lag < 0:
            v.fail(f"{path}[{i}]", f"must be a non-negative integer, got {lag!r}")
            ok = False
        elif i > 0 and isinstance(value[i - 1], int) and lag <= value[i - 1]:
            v.fail(f"{path}[{i}]", "lags must be strictly increasing")
            ok = False
        elif window is not None and lag >= window:
            v.fail(f"{path}[{i}]", f"lag {lag} outside the memory window of {window} steps")
            ok = False
    if ok and value[0] != 0:
        v.fail(f"{path}[0]", "mask must start with lag 0")
        ok = False
    return Mask(tuple(value), axis) if ok else None


def _experiment_params(
    v: _Validator, kind: str, section: Dict[str, Any], baths: Dict[Axis, BathSpec]
) -> Dict[str, Any]:
    """Parse the kind-specific part of the experiment section."""
    params: Dict[str, Any] = {}
    if kind == "filter_sweep":
        thetas = v.number_list(section, "thetas", "experiment.thetas", required=True)
        if any(t < 0 for t in thetas):
            v.fail("experiment.thetas", "thresholds must be non-negative")
        if any(b < a for a, b in zip(thetas, thetas[1:])):
            v.fail("experiment.thetas", "thresholds must be sorted ascending")
        params["thetas"] = thetas
    elif kind == "memory_sweep":
        params["t_mems"] = v.number_list(section, "t_mems", "experiment.t_mems", required=True)
        default_axis = sorted(baths)[0].value if baths else Axis.Z.value
        axis = str(section.get("axis", default_axis)).lower()
        if axis not in ("x", "z", "both"):
            v.fail("experiment.axis", f"must be x, z or both, got {axis!r}")
        params["axis"] = axis
        params["reference_mask_size"] = v.integer(section, "reference_mask_size", "experiment.reference_mask_size", 6)
        params["tolerance"] = v.number(section, "tolerance", "experiment.tolerance", 1e-3, positive=True)
        if section.get("fit_window") is not None:
            window = v.number_list(section, "fit_window", "experiment.fit_window")
            if len(window) != 2 or window[0] >= window[1]:
                v.fail("experiment.fit_window", "must be [start, end] with start < end")
            params["fit_window"] = window
    elif kind in ("mask_search", "mask_budget"):
        if kind == "mask_search":
            params["n_mask_x"] = v.integer(section, "n_mask_x", "experiment.n_mask_x", 1)
            params["n_mask_z"] = v.integer(section, "n_mask_z", "experiment.n_mask_z", 1)
        else:
            params["total"] = v.integer(section, "total", "experiment.total", required=True, minimum=2)
        params["max_candidates"] = v.integer(section, "max_candidates", "experiment.max_candidates", 10_000)
        params["good_factor"] = v.number(section, "good_factor", "experiment.good_factor", 2.0, positive=True)
        params["unsatisfactory_factor"] = v.number(
            section, "unsatisfactory_factor", "experiment.unsatisfactory_factor", 5.0, positive=True
        )
    elif kind == "convergence":
        params["dts"] = v.number_list(section, "dts", "experiment.dts")
        steps = v.number_list(section, "mem_steps", "experiment.mem_steps")
        if any(s != int(s) or s < 1 for s in steps):
            v.fail("experiment.mem_steps", "memory lengths must be positive integers")
        params["mem_steps"] = [int(s) for s in steps]
        params["fixed_mem_steps"] = v.integer(section, "fixed_mem_steps", "experiment.fixed_mem_steps")
    return params


def _steps_of(v: _Validator, t: Optional[float], dt: float, path: str, n_steps: int) -> Optional[int]:
    if t is None:
        return None
    steps = int(round(t / dt))
    if abs(steps * dt - t) > 1e-9 * max(1.0, t):
        v.fail(path, f"{t} is not a multiple of dt={dt}")
        return None
    if steps > n_steps:
        v.fail(path, f"{t} exceeds the total time {n_steps * dt}")
        return None
    return steps


def _read_yaml(path: Path) -> Dict[str, Any]:
    """Load a YAML mapping from file."""
    if not path.exists():
        raise ConfigValidationError([ConfigIssue("", f"config file not found: {path}")])
    try:
        with open(path, 'r') as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        problem = getattr(exc, "problem", None) or str(exc)
        line = mark.line + 1 if mark is not None else None
        column = mark.column + 1 if mark is not None else None
        raise ConfigValidationError([ConfigIssue("", f"YAML syntax error: {problem}", line, column)]) from exc
    if not isinstance(data, dict):
        raise ConfigValidationError([ConfigIssue("", "top level must be a mapping")])
    return data


def parse_config(
    path: str,
    overrides: Optional[Dict[str, Any]] = None,
    kind: Optional[str] = None,
) -> ExperimentConfig:
    """Read and validate an experiment file.

    ``overrides`` may carry ``output_dir`` and ``workers`` from the command
    line; they win over environment variables, which win over the file.
    ``kind`` is the requested experiment and must agree with ``experiment.kind``.
    """
    overrides = overrides or {}
    settings = load_settings()
    config_path = Path(path)
    data = _read_yaml(config_path)
    v = _Validator()

    system = v.section(data, "system")
    delta = v.number(system, "delta", "system.delta", default=1.0, positive=True)
    rho0 = _initial_state(v, system.get("initial_state"))
    baths = _baths(v, data)

    grid = v.section(data, "grid")
    dt = v.number(grid, "dt", "grid.dt", required=True, positive=True)
    n_steps = v.integer(grid, "n_steps", "grid.n_steps")
    t_tot = v.number(grid, "t_tot", "grid.t_tot", positive=True)
    if dt is not None and n_steps is None:
        if t_tot is None:
            v.fail("grid.n_steps", "required (or give grid.t_tot)")
        else:
            n_steps = int(round(t_tot / dt))
            if n_steps < 1 or abs(n_steps * dt - t_tot) > 1e-9 * max(1.0, t_tot):
                v.fail("grid.t_tot", f"{t_tot} is not a positive multiple of dt={dt}")
                n_steps = None

    engine = v.section(data, "engine")
    t_mem = {
        axis: v.number(engine, f"t_mem_{axis.value}", f"engine.t_mem_{axis.value}", positive=True) for axis in Axis
    }
    masks: Dict[Axis, Optional[Mask]] = {}
    for axis in Axis:
        raw = engine.get(f"mask_{axis.value}")
        if raw is not None and baths and axis not in baths:
            v.fail(f"engine.mask_{axis.value}", f"no {axis.value}-coupled bath configured")
            masks[axis] = None
            continue
        window = None
        if dt is not None and n_steps is not None:
            steps = _steps_of(v, t_mem[axis], dt, f"engine.t_mem_{axis.value}", n_steps)
            window = n_steps if t_mem[axis] is None else steps
        masks[axis] = _mask(v, raw, axis, window)
    theta = v.number(engine, "theta", "engine.theta", default=0.0, minimum=0.0)
    extended = engine.get("extended_memory", False)
    if not isinstance(extended, bool):
        v.fail("engine.extended_memory", f"must be true or false, got {extended!r}")
        extended = False
    max_paths = v.integer(engine, "max_paths", "engine.max_paths", default=settings['MAX_PATHS'])
    if os.getenv('QUAPI_MAX_PATHS'):
        max_paths = settings['MAX_PATHS']
    workers = v.integer(engine, "workers", "engine.workers", default=settings['WORKERS'])
    if os.getenv('QUAPI_WORKERS'):
        workers = settings['WORKERS']
    if overrides.get("workers") is not None:
        workers = int(overrides["workers"])
    drop_fraction = v.number(engine, "drop_fraction", "engine.drop_fraction", default=0.0, minimum=0.0)
    if drop_fraction is not None and drop_fraction >= 1:
        v.fail("engine.drop_fraction", f"must be below 1, got {drop_fraction}")

    experiment = v.section(data, "experiment")
    file_kind = experiment.get("kind")
    if file_kind is not None and file_kind not in EXPERIMENT_LABELS:
        v.fail("experiment.kind", f"unknown kind {file_kind!r}; expected one of {sorted(EXPERIMENT_LABELS)}")
    if kind is not None and file_kind is not None and file_kind != kind:
        v.fail("experiment.kind", f"file describes {file_kind!r} but {kind!r} was requested")
    resolved_kind = kind or file_kind or "dynamics"
    params = _experiment_params(v, resolved_kind, experiment, baths)
    if resolved_kind in ("mask_budget",) and set(baths) != {Axis.X, Axis.Z}:
        v.fail("baths", "mask budget search needs both x and z baths")

    output = v.section(data, "output")
    output_dir = str(output.get("directory", settings['OUTPUT_DIR']))
    if os.getenv('QUAPI_OUTPUT_DIR'):
        output_dir = settings['OUTPUT_DIR']
    if overrides.get("output_dir"):
        output_dir = str(overrides["output_dir"])
    observable = output.get("observable", "sigma_z")
    if observable not in OBSERVABLES:
        v.fail("output.observable", f"must be one of {list(OBSERVABLES)}, got {observable!r}")

    if v.issues:
        raise ConfigValidationError(v.issues)

    try:
        engine_config = EngineConfig(
            dt=dt,
            n_steps=n_steps,
            baths=frozenset(baths) or frozenset({Axis.Z}),
            t_mem_x=t_mem[Axis.X],
            t_mem_z=t_mem[Axis.Z],
            mask_x=masks[Axis.X],
            mask_z=masks[Axis.Z],
            theta=theta,
            extended_memory=extended,
            initial_state=rho0,
            max_paths=max_paths,
            workers=workers,
            drop_fraction=drop_fraction,
        )
        tls = TwoLevelSystem(delta)
    except DomainError as exc:
        raise ConfigValidationError([ConfigIssue("engine", str(exc))]) from exc

    return ExperimentConfig(
        tls=tls,
        baths=baths,
        engine=engine_config,
        kind=resolved_kind,
        params=params,
        output_dir=output_dir,
        observable=observable,
        name=config_path.stem,
    )
