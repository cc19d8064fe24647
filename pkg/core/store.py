"""File-based storage for experiment results."""

from __future__ import annotations

import csv
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from core.models import RunIndexEntry, RunResult
from tools.file_utils import ensure_directory

logger = logging.getLogger(__name__)

TRAJECTORY_HEADER = [
    "t",
    "rho00_re",
    "rho00_im",
    "rho01_re",
    "rho01_im",
    "rho10_re",
    "rho10_im",
    "rho11_re",
    "rho11_im",
    "sigma_z",
    "trace_re",
    "norm",
    "n_paths",
    "mem_bytes",
]


def _timestamp() -> str:
    """Current UTC time in ISO format."""
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


def _fmt(value: float) -> str:
    return "%.17g" % value


def _json_default(value: Any) -> Any:
    """Convert NumPy values for json.dump."""
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serialisable")


def trajectory_rows(result: RunResult) -> List[List[str]]:
    """Format a run as CSV rows matching TRAJECTORY_HEADER."""
    trajectory, stats = result
    rows = []
    for i, t in enumerate(trajectory.times):
        rho = trajectory.rho[i]
        trace = rho[0, 0] + rho[1, 1]
        row = [_fmt(t)]
        for a in range(2):
            for b in range(2):
                row += [_fmt(rho[a, b].real), _fmt(rho[a, b].imag)]
        row += [
            _fmt((rho[0, 0] - rho[1, 1]).real),
            _fmt(trace.real),
            _fmt(abs(trace)),
            str(int(stats.path_counts[i])),
            str(int(stats.mem_bytes[i])),
        ]
        rows.append(row)
    return rows


class ResultStore:
    """Run outputs under ``<output_dir>/<run_id>/`` plus an ``index.json`` of runs."""

    def __init__(self, output_dir: str = "data/results"):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.index_file = self.output_dir / "index.json"
        self._ensure_index()

    def _ensure_index(self) -> None:
        """Ensure index file exists."""
        if not self.index_file.exists():
            with open(self.index_file, "w") as f:
                json.dump({"runs": []}, f, indent=2)

    def _run_dir(self, run_id: str) -> Path:
        """Get the output directory of a run, creating it if needed."""
        return ensure_directory(self.output_dir / run_id)

    def write_trajectory(self, run_id: str, name: str, result: RunResult) -> str:
        """Write a trajectory CSV and return its path."""
        path = self._run_dir(run_id) / f"{name}.csv"
        with path.open("w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(TRAJECTORY_HEADER)
            writer.writerows(trajectory_rows(result))
        logger.info(f"Wrote trajectory {path}")
        return str(path)

    def write_report(self, run_id: str, name: str, payload: Any) -> str:
        """Write a JSON report and return its path."""
        path = self._run_dir(run_id) / f"{name}.json"
        with path.open("w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, default=_json_default)
        logger.info(f"Wrote report {path}")
        return str(path)

    def record_run(self, run_id: str, kind: str, status: str, files: List[str]) -> RunIndexEntry:
        """Add or replace a run in the index, newest first."""
        with open(self.index_file, "r") as f:
            index = json.load(f)
        entry = RunIndexEntry(id=run_id, kind=kind, status=status, created_at=_timestamp(), files=list(files))
        runs = [r for r in index["runs"] if r["id"] != run_id]
        runs.append(entry)
        index["runs"] = sorted(runs, key=lambda r: r.get("created_at", ""), reverse=True)
        with open(self.index_file, "w") as f:
            json.dump(index, f, indent=2)
        return entry

    def list_runs(self) -> List[Dict[str, Any]]:
        """Get all indexed runs."""
        with open(self.index_file, "r") as f:
            return json.load(f)["runs"]

    def load_report(self, run_id: str, name: str) -> Optional[Any]:
        """Get a stored report, or None if missing."""
        path = self.output_dir / run_id / f"{name}.json"
        if not path.exists():
            return None
        with path.open("r", encoding="utf-8") as f:
            return json.load(f)

    def load_trajectory(self, run_id: str, name: str) -> Optional[np.ndarray]:
        """Numeric columns of a stored trajectory, shape (n_rows, 14)."""
        path = self.output_dir / run_id / f"{name}.csv"
        if not path.exists():
            return None
        return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
