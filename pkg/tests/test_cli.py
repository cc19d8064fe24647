import json

import pytest

from app.cli import EXIT_INVALID, EXIT_OK, EXIT_RESOURCE, build_parser, main

SMALL = """
baths:
  z:
    gamma: 0.0625
    omega_c: 10.0
    beta: 5.0
grid:
  dt: 0.3
  n_steps: 5
engine:
  t_mem_z: 0.9
"""


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("QUAPI_OUTPUT_DIR", "QUAPI_WORKERS", "QUAPI_MAX_PATHS", "QUAPI_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


def test_parser_requires_config():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["dynamics"])


def test_dynamics_run(write_yaml, tmp_path):
    path = write_yaml("small.yaml", SMALL)
    out = tmp_path / "out"
    assert main(["dynamics", "--config", str(path), "--out", str(out), "--workers", "2"]) == EXIT_OK
    assert (out / "dynamics-small" / "trajectory.csv").exists()
    index = json.loads((out / "index.json").read_text())
    assert index["runs"][0]["status"] == "success"


def test_invalid_config_exit_code(write_yaml, tmp_path, capsys):
    path = write_yaml("bad.yaml", SMALL.replace("dt: 0.3", "dt: -0.3"))
    assert main(["dynamics", "--config", str(path), "--out", str(tmp_path)]) == EXIT_INVALID
    assert "grid.dt" in capsys.readouterr().err


def test_kind_mismatch_exit_code(write_yaml, tmp_path):
    path = write_yaml("kind.yaml", SMALL + "experiment:\n  kind: dynamics\n")
    assert main(["convergence", "--config", str(path), "--out", str(tmp_path)]) == EXIT_INVALID


def test_candidate_budget_exit_code(write_yaml, tmp_path):
    text = SMALL + "experiment:\n  kind: mask_search\n  n_mask_z: 2\n  max_candidates: 1\n"
    path = write_yaml("search.yaml", text)
    assert main(["mask-search", "--config", str(path), "--out", str(tmp_path)]) == EXIT_RESOURCE
