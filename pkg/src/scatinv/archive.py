"""File formats: per-k plane-field CSV archives with JSON sidecars,
two-column curve CSVs, legacy structured-points volume files, metrics
documents, and the run manifest.
"""

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .fields import Grid3, PlaneField, PlaneGrid


def _json_dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _json_load(path):
    with open(path) as fh:
        return json.load(fh)


def save_plane_field(field: PlaneField, csv_path, meta_path):
    """CSV columns (x1, x2, re, im) plus a JSON metadata sidecar."""
    x1, x2 = field.plane.meshgrid()
    data = np.column_stack([
        x1.ravel(), x2.ravel(),
        field.values.real.ravel(), field.values.imag.ravel(),
    ])
    np.savetxt(csv_path, data, delimiter=",", header="x1,x2,re,im", comments="")
    lo1, lo2 = field.plane.origin2
    n1, n2 = field.plane.counts2
    s1, s2 = field.plane.spacing2
    _json_dump({
        "k": field.k,
        "plane_x3": field.plane.x3,
        "origin": [lo1, lo2],
        "spacing": [s1, s2],
        "counts": [n1, n2],
        "rectangle": [[lo1, lo1 + s1 * (n1 - 1)], [lo2, lo2 + s2 * (n2 - 1)]],
    }, meta_path)


def load_plane_field(csv_path, meta_path):
    meta = _json_load(meta_path)
    plane = PlaneGrid(meta["plane_x3"], meta["origin"], meta["spacing"],
                      meta["counts"])
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1)
    vals = (data[:, 2] + 1j * data[:, 3]).reshape(plane.shape)
    return PlaneField(plane, meta["k"], vals)


def save_plane_archive(fields, directory, prefix="field"):
    """One CSV+JSON pair per wave number plus an index document."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for f in sorted(fields, key=lambda f: f.k):
        stem = f"{prefix}_k{f.k:.6f}"
        save_plane_field(f, directory / f"{stem}.csv", directory / f"{stem}.json")
        entries.append({"k": f.k, "csv": f"{stem}.csv", "meta": f"{stem}.json"})
    _json_dump({"prefix": prefix, "entries": entries}, directory / "index.json")
    return directory / "index.json"


def load_plane_archive(directory):
    directory = Path(directory)
    index = _json_load(directory / "index.json")
    return [
        load_plane_field(directory / e["csv"], directory / e["meta"])
        for e in index["entries"]
    ]


def save_curve(path, xs, ys, header="k,s"):
    np.savetxt(path, np.column_stack([xs, ys]), delimiter=",",
               header=header, comments="")


def write_structured_points(grid: Grid3, values, path, name="c"):
    """Legacy ASCII structured-points volume file (x varies fastest)."""
    values = np.asarray(values)
    if values.shape != grid.shape:
        raise ValidationError("volume shape does not match grid")
    nx, ny, nz = grid.counts
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{name} volume\n")
        fh.write("ASCII\n")
        fh.write("DATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {nx} {ny} {nz}\n")
        fh.write(f"ORIGIN {grid.origin[0]:.9g} {grid.origin[1]:.9g} "
                 f"{grid.origin[2]:.9g}\n")
        fh.write(f"SPACING {grid.spacing[0]:.9g} {grid.spacing[1]:.9g} "
                 f"{grid.spacing[2]:.9g}\n")
        fh.write(f"POINT_DATA {nx * ny * nz}\n")
        fh.write(f"SCALARS {name} float 1\n")
        fh.write("LOOKUP_TABLE default\n")
        flat = values.ravel(order="F")
        for start in range(0, flat.size, 9):
            row = flat[start:start + 9]
            fh.write(" ".join(f"{v:.7g}" for v in row) + "\n")


def read_structured_points(path):
    """Read back a volume written by :func:`write_structured_points`."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    dims = origin = spacing = None
    data_start = None
    for i, line in enumerate(lines):
        if line.startswith("DIMENSIONS"):
            dims = tuple(int(v) for v in line.split()[1:4])
        elif line.startswith("ORIGIN"):
            origin = tuple(float(v) for v in line.split()[1:4])
        elif line.startswith("SPACING"):
            spacing = tuple(float(v) for v in line.split()[1:4])
        elif line.startswith("LOOKUP_TABLE"):
            data_start = i + 1
            break
    if None in (dims, origin, spacing) or data_start is None:
        raise ValidationError(f"{path} is not a structured-points file")
    flat = np.array(
        [float(v) for line in lines[data_start:] for v in line.split()]
    )
    grid = Grid3(origin, spacing, dims)
    return grid, flat.reshape(dims, order="F")


def save_metrics(metrics, path):
    _json_dump(metrics, path)


def load_metrics(path):
    return _json_load(path)


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunManifest:
    """Per-run record of stage inputs, outputs, and timings."""

    def __init__(self, run_dir):
        self.run_dir = Path(run_dir)
        self.path = self.run_dir / "manifest.json"
        if self.path.exists():
            self.data = _json_load(self.path)
        else:
            from . import __version__

            self.data = {"tool_version": __version__, "stages": {}}

    def record(self, stage, inputs, outputs, seconds, config_path=None):
        entry = {
            "inputs": {},
            "outputs": [],
            "seconds": round(float(seconds), 3),
        }
        if config_path is not None:
            entry["config"] = str(config_path)
            entry["config_sha256"] = file_sha256(config_path)
        for p in inputs:
            p = Path(p)
            entry["inputs"][str(p.relative_to(self.run_dir)
                                if p.is_relative_to(self.run_dir) else p)] = (
                file_sha256(p) if p.is_file() else "directory"
            )
        for p in outputs:
            p = Path(p)
            entry["outputs"].append(
                str(p.relative_to(self.run_dir)
                    if p.is_relative_to(self.run_dir) else p)
            )
        self.data["stages"][stage] = entry
        _json_dump(self.data, self.path)

    def produced(self):
        """All files declared as some stage's output."""
        out = set()
        for entry in self.data["stages"].values():
            out.update(entry["outputs"])
        return out

    def externals(self):
        """Inputs that no prior stage produced."""
        produced = self.produced()
        missing = set()
        for entry in self.data["stages"].values():
            for p in entry["inputs"]:
                if p not in produced:
                    missing.add(p)
        return missing
