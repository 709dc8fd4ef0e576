"""Minimal PLY reader/writer for point clouds.

Reading accepts ascii and binary_little_endian files and requires x, y, z
vertex properties; all other elements and properties are skipped. Writing
emits vertex positions, optionally with float red/green/blue color
properties.
"""

from __future__ import annotations

import io
import os
from pathlib import Path

import numpy as np

from .geometry import PointCloud

_PLY_TYPES = {
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "i2",
    "int16": "i2",
    "ushort": "u2",
    "uint16": "u2",
    "int": "i4",
    "int32": "i4",
    "uint": "u4",
    "uint32": "u4",
    "float": "f4",
    "float32": "f4",
    "double": "f8",
    "float64": "f8",
}


class PlyError(ValueError):
    """Malformed PLY content."""


def _parse_header(stream) -> tuple[str, list[tuple[str, int, list[tuple[str, str]]]]]:
    magic = stream.readline().strip()
    if magic != b"ply":
        raise PlyError("not a PLY file")
    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    while True:
        line = stream.readline()
        if not line:
            raise PlyError("unterminated PLY header")
        tokens = line.decode("ascii", errors="replace").split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise PlyError("property before any element")
            if tokens[1] == "list":
                elements[-1][2].append(("list:" + tokens[2] + ":" + tokens[3], tokens[-1]))
            else:
                elements[-1][2].append((tokens[1], tokens[2]))
        elif tokens[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def read_ply(path: str | os.PathLike) -> PointCloud:
    """Read a point cloud from an ascii or binary little-endian PLY file."""
    with open(path, "rb") as f:
        fmt, elements = _parse_header(f)
        vertex = next((e for e in elements if e[0] == "vertex"), None)
        if vertex is None:
            raise PlyError("PLY file has no vertex element")
        _, count, props = vertex
        names = [p[1] for p in props]
        for axis in ("x", "y", "z"):
            if axis not in names:
                raise PlyError(f"vertex element missing property {axis!r}")
        if any(p[0].startswith("list:") for p in props):
            raise PlyError("list properties on vertex element are unsupported")
        if elements[0][0] != "vertex":
            raise PlyError("vertex element must come first")

        if fmt == "ascii":
            rows = []
            for _ in range(count):
                line = f.readline().split()
                if len(line) < len(props):
                    raise PlyError("truncated vertex data")
                rows.append([float(x) for x in line[: len(props)]])
            data = np.asarray(rows, dtype=np.float64)
            xyz = data[:, [names.index("x"), names.index("y"), names.index("z")]]
        else:
            dtype = np.dtype([(p[1], "<" + _PLY_TYPES[p[0]]) for p in props])
            raw = f.read(dtype.itemsize * count)
            if len(raw) < dtype.itemsize * count:
                raise PlyError("truncated vertex data")
            rec = np.frombuffer(raw, dtype=dtype, count=count)
            xyz = np.stack(
                [rec["x"].astype(np.float64), rec["y"].astype(np.float64), rec["z"].astype(np.float64)],
                axis=1,
            )
    return PointCloud(positions=xyz)


def write_ply(
    path: str | os.PathLike,
    cloud: PointCloud,
    colors: np.ndarray | None = None,
    binary: bool = True,
) -> None:
    """Write positions (and optional Nx3 float colors) to a PLY file."""
    pts = cloud.positions.astype("<f4")
    n = pts.shape[0]
    if colors is not None:
        colors = np.asarray(colors, dtype="<f4").reshape(n, 3)

    header = io.StringIO()
    header.write("ply\n")
    header.write("format binary_little_endian 1.0\n" if binary else "format ascii 1.0\n")
    header.write(f"element vertex {n}\n")
    header.write("property float x\nproperty float y\nproperty float z\n")
    if colors is not None:
        header.write("property float red\nproperty float green\nproperty float blue\n")
    header.write("end_header\n")

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(header.getvalue().encode("ascii"))
        data = pts if colors is None else np.concatenate([pts, colors], axis=1)
        if binary:
            f.write(data.astype("<f4").tobytes())
        else:
            np.savetxt(f, data, fmt="%.9g")
    os.replace(tmp, path)
