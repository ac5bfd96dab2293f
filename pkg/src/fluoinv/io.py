"""CSV and manifest output.

Every CSV starts with a schema comment line and stores floats at 17
significant digits, so reruns of a deterministic command are byte-stable
and usable as regression fixtures.  Each command also writes a manifest
listing every emitted file with its content digest.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np

from .grid import Grid

__all__ = ["fmt", "write_csv", "write_field_csv", "Manifest"]

SCHEMA_PREFIX = "fluoinv"


def fmt(x) -> str:
    """Full-precision, locale-independent float formatting."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path: Path, schema: str, header: list[str], rows) -> Path:
    path = Path(path)
    lines = [f"# schema={SCHEMA_PREFIX}/{schema}", ",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_field_csv(path: Path, grid: Grid, columns: dict) -> Path:
    """Nodal fields as (x[, y], value...) rows in node order."""
    coord_names = ["x", "y"][: grid.dim]
    header = coord_names + list(columns)
    arrays = [grid.coords[:, d] for d in range(grid.dim)]
    arrays += [np.asarray(v.values if hasattr(v, "values") else v) for v in columns.values()]
    rows = zip(*arrays)
    return write_csv(path, "nodal-field-v1", header, rows)


class Manifest:
    """Inventory of a command run: configuration echo plus file digests."""

    def __init__(self, command: str, config: dict, seed: int, version: str):
        self.payload = {
            "command": command,
            "config": config,
            "seed": seed,
            "version": version,
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "files": [],
        }

    def add(self, path: Path):
        data = Path(path).read_bytes()
        self.payload["files"].append({
            "name": Path(path).name,
            "bytes": len(data),
            "sha256": hashlib.sha256(data).hexdigest(),
        })

    def write(self, out_dir: Path) -> Path:
        self.payload["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(self.payload, indent=2, sort_keys=True) + "\n")
        return path
