"""Plain-text and image writers for fields, traces and tables."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "write_matrix_csv",
    "read_matrix_csv",
    "write_table_csv",
    "field_to_gray",
    "write_field_image",
    "write_field",
    "write_manifest",
    "MANIFEST_REQUIRED",
    "validate_manifest",
]


def write_matrix_csv(path, values: np.ndarray, fmt: str = "%.17g") -> Path:
    """Write a 2D array as comma-separated rows (no header)."""
    path = Path(path)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    np.savetxt(path, values, delimiter=",", fmt=fmt)
    return path


def read_matrix_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))


def write_table_csv(path, rows: list[dict], columns: list[str] | None = None) -> Path:
    """Write dict rows with a header line; floats use repr for round-tripping."""
    path = Path(path)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c, "")) for c in columns])
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def field_to_gray(field: np.ndarray, lo: float = 1.0, hi: float | None = None) -> np.ndarray:
    """8-bit image of a nodal field, linear map [lo, hi] -> [0, 255].

    ``hi`` defaults to the field maximum.  Rows run from the top (largest y)
    to the bottom, columns follow x, so the image looks like the domain.
    """
    field = np.asarray(field, dtype=float)
    if hi is None:
        hi = float(field.max())
    if hi > lo:
        scaled = np.clip((field - lo) / (hi - lo), 0.0, 1.0)
    else:
        scaled = np.zeros_like(field)
    pix = np.rint(255.0 * scaled).astype(np.uint8)
    return np.ascontiguousarray(pix.T[::-1])


def write_field_image(path, field: np.ndarray, lo: float = 1.0, hi: float | None = None) -> Path:
    path = Path(path)
    Image.fromarray(field_to_gray(field, lo, hi), mode="L").save(path)
    return path


def write_field(out_dir, name: str, field: np.ndarray, image: bool = True) -> list[Path]:
    """``name.csv`` (rows = x index, columns = y index) plus ``name.png``."""
    out_dir = Path(out_dir)
    paths = [write_matrix_csv(out_dir / f"{name}.csv", field)]
    if image:
        paths.append(write_field_image(out_dir / f"{name}.png", field))
    return paths


MANIFEST_REQUIRED = {
    "package_version": str,
    "command": str,
    "seed": int,
    "kernel_backend": str,
    "geometry": dict,
    "phantom": dict,
    "grid": dict,
    "inversion": dict,
    "noise": dict,
    "qrm": dict,
    "outputs": list,
}


def validate_manifest(manifest: dict) -> None:
    """Raise ``ValueError`` if a required manifest entry is missing or mistyped."""
    for key, kind in MANIFEST_REQUIRED.items():
        if key not in manifest:
            raise ValueError(f"manifest lacks {key!r}")
        if not isinstance(manifest[key], kind):
            raise ValueError(f"manifest entry {key!r} should be {kind.__name__}")


def write_manifest(path, manifest: dict) -> Path:
    validate_manifest(manifest)
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")
