from pathlib import Path

import pytest

from app.config import ConfigValidationError, load_settings, parse_config
from core.ensemble import Mask
from core.models import Axis

REPO = Path(__file__).resolve().parent.parent
EXPERIMENTS = sorted((REPO / "config" / "experiments").glob("*.yaml"))

BASE = """
baths:
  z:
    gamma: 0.0625
    omega_c: 10.0
    beta: 5.0
grid:
  dt: 0.3
  n_steps: 20
"""


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("QUAPI_OUTPUT_DIR", "QUAPI_WORKERS", "QUAPI_MAX_PATHS", "QUAPI_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


def paths_of(excinfo):
    return [issue.path for issue in excinfo.value.errors]


@pytest.mark.parametrize("path", EXPERIMENTS, ids=[p.stem for p in EXPERIMENTS])
def test_shipped_experiments_parse(path):
    config = parse_config(str(path))
    assert config.name == path.stem
    assert config.engine.n_steps >= 1


def test_single_bath_dynamics_file():
    config = parse_config(str(REPO / "config" / "experiments" / "dynamics_single_z.yaml"))
    assert config.kind == "dynamics"
    assert set(config.baths) == {Axis.Z}
    assert config.engine.window(Axis.Z) == 6
    assert config.engine.mask_z == Mask((0, 1, 3))
    assert config.engine.n_steps == 40
    assert config.tls.tunneling == 1.0


def test_preset_needs_temperature():
    with pytest.raises(ConfigValidationError) as excinfo:
        parse_config(str(REPO / "config" / "reference_preset.yaml"))
    assert {"baths.x.beta", "baths.z.beta"} <= set(paths_of(excinfo))


def test_preset_with_temperature(write_yaml):
    text = (REPO / "config" / "reference_preset.yaml").read_text(encoding="utf-8").replace("    beta:\n", "    beta: 5.0\n")
    config = parse_config(str(write_yaml("preset.yaml", text)))
    assert config.engine.n_steps == 117
    assert config.engine.window(Axis.X) == config.engine.window(Axis.Z) == 6
    assert config.engine.mask_z == Mask((0, 1, 3))


def test_total_time_sets_steps(write_yaml):
    text = BASE.replace("n_steps: 20", "t_tot: 3.0")
    assert parse_config(str(write_yaml("t_tot.yaml", text))).engine.n_steps == 10


def test_every_issue_is_reported(write_yaml):
    text = """
baths:
  y: {gamma: 0.1, omega_c: 1.0, beta: 1.0}
  z: {gamma: -1.0, omega_c: 10.0}
grid: {n_steps: 5}
"""
    with pytest.raises(ConfigValidationError) as excinfo:
        parse_config(str(write_yaml("bad.yaml", text)))
    assert set(paths_of(excinfo)) >= {"baths.y", "baths.z.gamma", "baths.z.beta", "grid.dt"}


def test_mask_element_path(write_yaml):
    text = BASE + "engine:\n  t_mem_z: 0.9\n  mask_z: [0, 1, 3]\n"
    with pytest.raises(ConfigValidationError) as excinfo:
        parse_config(str(write_yaml("mask.yaml", text)))
    assert paths_of(excinfo) == ["engine.mask_z[2]"]


def test_mask_must_start_at_zero(write_yaml):
    text = BASE + "engine:\n  mask_z: [1, 2]\n"
    with pytest.raises(ConfigValidationError) as excinfo:
        parse_config(str(write_yaml("mask0.yaml", text)))
    assert paths_of(excinfo) == ["engine.mask_z[0]"]


def test_memory_time_off_grid(write_yaml):
    text = BASE + "engine:\n  t_mem_z: 0.5\n"
    with pytest.raises(ConfigValidationError) as excinfo:
        parse_config(str(write_yaml("tmem.yaml", text)))
    assert "engine.t_mem_z" in paths_of(excinfo)


def test_mask_without_bath(write_yaml):
    text = BASE + "engine:\n  mask_x: [0]\n"
    with pytest.raises(ConfigValidationError) as excinfo:
        parse_config(str(write_yaml("nox.yaml", text)))
    assert paths_of(excinfo) == ["engine.mask_x"]


def test_yaml_syntax_error_has_position(write_yaml):
    with pytest.raises(ConfigValidationError) as excinfo:
        parse_config(str(write_yaml("broken.yaml", "grid:\n  dt: [0.3\n")))
    issue = excinfo.value.errors[0]
    assert issue.line is not None and issue.column is not None


def test_missing_file(tmp_path):
    with pytest.raises(ConfigValidationError):
        parse_config(str(tmp_path / "absent.yaml"))


def test_kind_must_match(write_yaml):
    text = BASE + "experiment:\n  kind: dynamics\n"
    with pytest.raises(ConfigValidationError) as excinfo:
        parse_config(str(write_yaml("kind.yaml", text)), kind="filter_sweep")
    assert "experiment.kind" in paths_of(excinfo)


@pytest.mark.parametrize("bath_key, expected", [("z", "z"), ("x", "x")])
def test_memory_sweep_axis_defaults_to_configured_bath(write_yaml, bath_key, expected):
    text = BASE.replace("  z:\n", f"  {bath_key}:\n") + "experiment:\n  kind: memory_sweep\n  t_mems: [0.3, 0.6]\n"
    config = parse_config(str(write_yaml("sweep.yaml", text)))
    assert config.params["axis"] == expected


def test_initial_state_matrix(write_yaml):
    good = BASE + "system:\n  initial_state: [[0.5, '0.5'], ['0.5', 0.5]]\n"
    config = parse_config(str(write_yaml("rho.yaml", good)))
    assert config.engine.initial_state.sigma_x() == pytest.approx(1.0)
    bad = BASE + "system:\n  initial_state: [[1.0, 0], [0, 1.0]]\n"
    with pytest.raises(ConfigValidationError) as excinfo:
        parse_config(str(write_yaml("rho2.yaml", bad)))
    assert paths_of(excinfo) == ["system.initial_state"]


def test_output_precedence(write_yaml, monkeypatch, tmp_path):
    text = BASE + "output:\n  directory: from-file\n"
    path = str(write_yaml("out.yaml", text))
    assert parse_config(path).output_dir == "from-file"
    monkeypatch.setenv("QUAPI_OUTPUT_DIR", "from-env")
    assert parse_config(path).output_dir == "from-env"
    assert parse_config(path, overrides={"output_dir": "from-cli"}).output_dir == "from-cli"


def test_workers_precedence(write_yaml, monkeypatch):
    path = str(write_yaml("workers.yaml", BASE + "engine:\n  workers: 2\n"))
    assert parse_config(path).engine.workers == 2
    monkeypatch.setenv("QUAPI_WORKERS", "3")
    assert parse_config(path).engine.workers == 3
    assert parse_config(path, overrides={"workers": 4}).engine.workers == 4


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("QUAPI_MAX_PATHS", "1024")
    monkeypatch.setenv("QUAPI_LOG_LEVEL", "debug")
    settings = load_settings()
    assert settings["MAX_PATHS"] == 1024
    assert settings["LOG_LEVEL"] == "DEBUG"
