"""
Export run artifacts to disk.

Every CSV starts with a ``# manifest: <id>`` line and writes floats with
``%.17g`` so re-runs with the same seed are byte-identical.
"""

import json
import logging
from pathlib import Path
from typing import Iterable, List, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel

from ..analysis.signal import Psd
from ..core.exceptions import ConfigParseError
from ..core.schemas import RunManifest
from ..physics.dynamics import SimTrajectory

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

TRAJECTORY_COLUMNS = ("t", "x", "y", "z", "vx", "vy", "vz")
TRAJECTORY_UNITS = ("s", "m", "m", "m", "m/s", "m/s", "m/s")


class ArtifactExporter:
    """Writes CSV, npz and JSON files into one output directory, tagged with a manifest."""

    def __init__(self, output_dir: str | Path, manifest: RunManifest):
        self.output_dir = Path(output_dir)
        self.manifest = manifest
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def _register(self, path: Path) -> Path:
        self.manifest.outputs.append(str(path))
        logger.info(f"Wrote {path}")
        return path

    def write_manifest(self) -> Path:
        """Write (or rewrite) ``manifest.json``; called before any other output."""
        path = self.output_dir / "manifest.json"
        path.write_text(self.manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
        return path

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.output_dir / name
        with open(path, "w", newline="", encoding="utf-8") as f:
            f.write(f"# manifest: {self.manifest.manifest_id}\n")
            frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return self._register(path)

    def write_trajectory(self, traj: SimTrajectory, stem: str = "trajectory") -> List[Path]:
        """Write the trajectory as ``.npz`` (with a JSON header) and as CSV."""
        columns = np.vstack([traj.times[None, :], traj.positions, traj.velocities])
        header = {
            "fields": list(TRAJECTORY_COLUMNS),
            "units": list(TRAJECTORY_UNITS),
            "sample_rate": traj.sample_rate,
            "integration_rate": traj.integration_rate,
            "decimation": traj.decimation,
            "seed": traj.rng_seed,
            "escaped": traj.escaped,
            "manifest_id": self.manifest.manifest_id,
        }
        npz_path = self.output_dir / f"{stem}.npz"
        np.savez(npz_path, data=columns, header=np.array(json.dumps(header)))
        self._register(npz_path)
        frame = pd.DataFrame(dict(zip(TRAJECTORY_COLUMNS, columns)))
        return [npz_path, self.write_frame(f"{stem}.csv", frame)]

    def write_psd(self, psd: Psd, name: str = "psd.csv") -> Path:
        return self.write_frame(name, psd.to_frame())

    def write_scan(self, name: str, columns: Tuple[str, str], points: Iterable[Tuple[float, float]]) -> Path:
        frame = pd.DataFrame(list(points), columns=list(columns))
        return self.write_frame(name, frame)

    def write_report(self, name: str, report: BaseModel) -> Path:
        path = self.output_dir / name
        data = report.model_dump(mode="json")
        data["manifest_id"] = self.manifest.manifest_id
        path.write_text(json.dumps(data, indent=2, allow_nan=True) + "\n", encoding="utf-8")
        return self._register(path)

    def write_lines(self, name: str, lines: Iterable[str]) -> Path:
        path = self.output_dir / name
        with open(path, "w", encoding="utf-8") as f:
            for line in lines:
                f.write(line + "\n")
        return self._register(path)


def read_scan(path: str | Path) -> List[Tuple[float, float]]:
    """Read a two-column scan CSV written by ``write_scan`` (or any CSV with a header)."""
    if not Path(path).is_file():
        raise ConfigParseError(str(path), "file does not exist")
    frame = pd.read_csv(path, comment="#")
    if frame.shape[1] < 2:
        raise ConfigParseError(str(path), f"expected two columns, found {frame.shape[1]}")
    return [(float(a), float(b)) for a, b in frame.iloc[:, :2].itertuples(index=False)]


def read_trajectory(path: str | Path) -> Tuple[np.ndarray, dict]:
    """Columns (t, x, y, z, vx, vy, vz) and JSON header of a trajectory ``.npz``."""
    if not Path(path).is_file():
        raise ConfigParseError(str(path), "file does not exist")
    with np.load(path) as data:
        return data["data"], json.loads(str(data["header"]))
