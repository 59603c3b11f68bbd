# export.py - field containers, CSV tables, OBJ meshes and JSON reports

import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import trimesh
from pydantic import BaseModel

from corrugation.errors import ConfigError, PreconditionError
from corrugation.fields import (
    Grid,
    HessianField,
    JacobianField,
    MapField,
    ScalarField,
    SymMatrixField,
    TensorField,
    VectorField,
)

log = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12e"
SCHEMA_VERSION = "1"

_KINDS = {
    cls.kind: cls
    for cls in (TensorField, ScalarField, VectorField, JacobianField, HessianField, SymMatrixField, MapField)
}


def dump_json(payload, path: Path) -> Path:
    """Sorted-key JSON with a trailing newline; byte-stable for equal payloads."""
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2, allow_nan=True) + "\n", encoding="utf-8")
    return path


# -------------------------
# Field containers
# -------------------------
def save_field(f: TensorField, path_stem) -> Dict[str, Path]:
    """Write <stem>.bin (little-endian float64, C order) and <stem>.json."""
    stem = Path(path_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(f.values, dtype="<f8").tobytes(order="C")
    header = {
        "schema_version": SCHEMA_VERSION,
        "kind": f.kind,
        "value_shape": list(f.values.shape[2:]),
        "dtype": "<f8",
        "sha256": hashlib.sha256(payload).hexdigest(),
        **f.grid.header(),
    }
    bin_path = stem.with_suffix(".bin")
    bin_path.write_bytes(payload)
    json_path = dump_json(header, stem.with_suffix(".json"))
    return {"bin": bin_path, "json": json_path}


def load_field(path_stem) -> TensorField:
    stem = Path(path_stem)
    try:
        header = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
        payload = stem.with_suffix(".bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read field container {stem}: {exc}")
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise ConfigError(f"field container {stem} fails its checksum")
    cls = _KINDS.get(header.get("kind"))
    if cls is None:
        raise ConfigError(f"unknown field kind {header.get('kind')!r}")
    grid = Grid(
        extent=tuple(float(v) for v in header["extent"]),
        resolution=tuple(int(v) for v in header["resolution"]),
        periodic=tuple(bool(v) for v in header["periodic"]),
    )
    shape = tuple(grid.resolution) + tuple(header["value_shape"])
    values = np.frombuffer(payload, dtype="<f8").reshape(shape)
    return cls(grid, values)


def field_slice_csv(f: TensorField, path, axis: int = 0, index: Optional[int] = None) -> Path:
    """Write the nodes of one grid line (default: the middle line) as a table."""
    index = f.grid.shape[1 - axis] // 2 if index is None else index
    line = np.take(f.values, index, axis=1 - axis)
    flat = line.reshape(line.shape[0], -1)
    table = pd.DataFrame(flat, columns=[f"c{k}" for k in range(flat.shape[1])])
    table.insert(0, "x", f.grid.axis(axis))
    return write_table(table, path)


def write_table(table: Union[pd.DataFrame, Sequence[dict]], path) -> Path:
    if not isinstance(table, pd.DataFrame):
        table = pd.DataFrame(list(table))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


# -------------------------
# Meshes
# -------------------------
def quad_faces(shape, periodic) -> np.ndarray:
    """Two triangles per grid cell in row-major order; periodic axes add wrap cells."""
    n1, n2 = shape
    c1 = n1 if periodic[0] else n1 - 1
    c2 = n2 if periodic[1] else n2 - 1
    i, j = np.meshgrid(np.arange(c1), np.arange(c2), indexing="ij")
    i, j = i.ravel(), j.ravel()
    ip, jp = (i + 1) % n1, (j + 1) % n2
    a, b, c, d = i * n2 + j, ip * n2 + j, ip * n2 + jp, i * n2 + jp
    return np.stack([np.stack([a, b, c], axis=1), np.stack([a, c, d], axis=1)], axis=1).reshape(-1, 3)


def mesh_of(u: MapField, projection: Sequence[int] = (0, 1, 2)) -> trimesh.Trimesh:
    projection = [int(k) for k in projection]
    if len(projection) != 3 or len(set(projection)) != 3:
        raise PreconditionError(f"projection needs three distinct target indices, got {projection}")
    if min(projection) < 0 or max(projection) >= u.target_dim:
        raise PreconditionError(f"projection {projection} out of range for target dimension {u.target_dim}")
    vertices = u.values[..., projection].reshape(-1, 3)
    faces = quad_faces(u.grid.shape, u.grid.periodic)
    return trimesh.Trimesh(vertices=vertices, faces=faces, process=False, validate=False)


def export_mesh(u: MapField, path, projection: Sequence[int] = (0, 1, 2)) -> Path:
    mesh = mesh_of(u, projection)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mesh.export(str(path), file_type="obj")
    log.info("✅ [Export] mesh with %d vertices written to %s", len(mesh.vertices), path)
    return path


# -------------------------
# Reports
# -------------------------
def report_tables(report) -> Dict[str, List[dict]]:
    """Per-stage tables of a report; empty dict for reports without rows."""
    data = report.model_dump(mode="json") if isinstance(report, BaseModel) else dict(report or {})
    tables: Dict[str, List[dict]] = {}
    if "rows" in data:
        tables["stages"] = [_flat_row(r) for r in data["rows"]]
    if "layers" in data:
        tables["layers"] = [_flat_row(r) for r in data["layers"]]
    if "lams" in data and "measured" in data:
        rows = []
        for i, lam in enumerate(data["lams"]):
            row = {"lam": lam}
            row.update({k: v[i] for k, v in sorted(data["measured"].items())})
            row.update({f"slope_{k}": v for k, v in sorted(data["slopes"].items())})
            rows.append(row)
        tables["ladder"] = rows
    return tables


def _flat_row(row: dict) -> dict:
    out = {}
    for key, value in row.items():
        if isinstance(value, dict):
            for sub, inner in sorted(value.items()):
                out[f"{key}.{sub}"] = inner
        elif not isinstance(value, list):
            out[key] = value
    return out


def export_report(report, out_dir, name: str) -> Dict[str, Path]:
    """<name>.json plus one <name>_<table>.csv per table."""
    out_dir = Path(out_dir)
    written = {"json": dump_json(report if report is not None else {"schema_version": SCHEMA_VERSION}, out_dir / f"{name}.json")}
    for table, rows in report_tables(report).items():
        written[table] = write_table(rows, out_dir / f"{name}_{table}.csv")
    return written


def sha256_of(paths: Iterable[Path]) -> Dict[str, str]:
    return {Path(p).name: hashlib.sha256(Path(p).read_bytes()).hexdigest() for p in sorted(paths, key=str)}
