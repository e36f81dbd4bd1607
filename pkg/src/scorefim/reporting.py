"""CSV and manifest writers shared by the CLI and the study harness.

All tables are RFC-4180 CSV with floats at 9 significant digits.
"""

from __future__ import annotations

import csv
import json
import sys
import time
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{x:.9g}"
    return str(x)


def write_table(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_trajectory_csv(path, trajectories: dict, p: int) -> None:
    """Schema: iteration, gamma, theta_1..theta_p, fim_diag_1..fim_diag_p
    (+ pruned_mass when present)."""
    header = (
        ["iteration", "gamma"]
        + [f"theta_{i + 1}" for i in range(p)]
        + [f"fim_diag_{i + 1}" for i in range(p)]
    )
    has_pruned = "pruned_mass" in trajectories
    if has_pruned:
        header.append("pruned_mass")
    rows = []
    for t in range(len(trajectories["iteration"])):
        row = [int(trajectories["iteration"][t]), trajectories["gamma"][t]]
        row += list(trajectories["theta"][t])
        row += list(trajectories["fim_diag"][t])
        if has_pruned:
            row.append(trajectories["pruned_mass"][t])
        rows.append(row)
    write_table(path, header, rows)


class ManifestTimer:
    """Collects config echo, environment versions and wall time for manifest.json."""

    def __init__(self, config_echo: dict, master_seed: int):
        self.config = config_echo
        self.master_seed = master_seed
        self.t0 = time.time()
        self.outputs: list[str] = []
        self.extra: dict = {}

    def add_output(self, path) -> None:
        self.outputs.append(str(path))

    def write(self, out_dir) -> Path:
        import scipy

        from . import __version__

        path = Path(out_dir) / "manifest.json"
        payload = {
            "config": self.config,
            "master_seed": self.master_seed,
            "scorefim_version": __version__,
            "numpy_version": np.__version__,
            "scipy_version": scipy.__version__,
            "python_version": sys.version.split()[0],
            "wall_time_s": round(time.time() - self.t0, 3),
            "outputs": sorted(self.outputs),
            **self.extra,
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")
