"""Flat-binary map export with sidecar headers, CSV helpers, atomic writes."""

from __future__ import annotations

import csv
import io
import os
from pathlib import Path

import numpy as np
import yaml


class FormatError(ValueError):
    pass


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write-then-rename so readers never observe a partial file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_map(base_path: str | os.PathLike, values: np.ndarray, meta: dict | None = None
              ) -> tuple[Path, Path]:
    """Write an HxWxC map as row-major little-endian float32 plus a YAML sidecar.

    Returns (binary path, sidecar path). The sidecar records height, width,
    channels and any caller metadata (seed, pose id, ...).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        values = values[:, :, None]
    if values.ndim != 3:
        raise FormatError("maps must be HxW or HxWxC")
    base = Path(base_path)
    bin_path = base.with_suffix(".f32")
    sidecar = base.with_suffix(".yaml")
    atomic_write_bytes(bin_path, values.astype("<f4").tobytes(order="C"))
    header = {
        "height": int(values.shape[0]),
        "width": int(values.shape[1]),
        "channels": int(values.shape[2]),
        "dtype": "float32-le",
        "layout": "row-major",
    }
    header.update(meta or {})
    atomic_write_text(sidecar, yaml.safe_dump(header, sort_keys=True))
    return bin_path, sidecar


def read_map(base_path: str | os.PathLike) -> tuple[np.ndarray, dict]:
    """Read a flat-binary map and its sidecar header."""
    base = Path(base_path)
    with open(base.with_suffix(".yaml")) as f:
        header = yaml.safe_load(f)
    shape = (header["height"], header["width"], header["channels"])
    raw = np.fromfile(base.with_suffix(".f32"), dtype="<f4")
    if raw.size != shape[0] * shape[1] * shape[2]:
        raise FormatError("binary payload size disagrees with sidecar header")
    return raw.reshape(shape).astype(np.float64), header


def write_csv_map(path: str | os.PathLike, values: np.ndarray) -> None:
    """CSV export for small single-channel maps (one row per image row)."""
    values = np.asarray(values)
    if values.ndim == 3 and values.shape[2] == 1:
        values = values[:, :, 0]
    if values.ndim != 2:
        raise FormatError("CSV export supports single-channel maps only")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in values:
        writer.writerow([f"{x:.9g}" for x in row])
    atomic_write_text(path, buf.getvalue())


def write_csv_rows(path: str | os.PathLike, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def write_manifest(path: str | os.PathLike, manifest: dict) -> None:
    atomic_write_text(path, yaml.safe_dump(manifest, sort_keys=True))
