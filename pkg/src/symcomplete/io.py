"""Point-cloud file I/O: PLY (ASCII and binary little-endian) and XYZ text."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .geometry import PointCloud

__all__ = [
    "CloudFormat",
    "CloudFile",
    "CloudParseError",
    "load_cloud",
    "save_cloud",
    "detect_format",
]

log = logging.getLogger(__name__)


class CloudFormat(Enum):
    PLY_ASCII = "ply-ascii"
    PLY_BINARY_LE = "ply-binary"
    XYZ = "xyz"


class CloudParseError(ValueError):
    """File is not a valid point-cloud file; the message carries the position."""


@dataclass(frozen=True)
class CloudFile:
    format: CloudFormat
    cloud: PointCloud
    had_normals: bool


# scalar PLY property types we can read
_PLY_DTYPES = {
    "char": "<i1", "int8": "<i1",
    "uchar": "<u1", "uint8": "<u1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
}

_COORD_PROPS = ("x", "y", "z")
_NORMAL_PROPS = ("nx", "ny", "nz")


@dataclass
class _PlyElement:
    name: str
    count: int
    properties: list[tuple[str, str]]  # (name, dtype string); list props marked "list"


def detect_format(path) -> CloudFormat:
    """Sniff the file format from the leading bytes, falling back to the extension."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4096)
    if head[:3] == b"ply":
        if b"binary_little_endian" in head:
            return CloudFormat.PLY_BINARY_LE
        if b"binary_big_endian" in head:
            raise CloudParseError(f"{path}: big-endian binary PLY is not supported")
        return CloudFormat.PLY_ASCII
    if path.suffix.lower() == ".ply":
        raise CloudParseError(f"{path}: .ply file does not start with a PLY header")
    return CloudFormat.XYZ


def load_cloud(path) -> CloudFile:
    """Parse a PLY or XYZ file into a point cloud (normals loaded when present)."""
    path = Path(path)
    fmt = detect_format(path)
    if fmt is CloudFormat.XYZ:
        cloud, had_normals = _load_xyz(path)
    else:
        cloud, had_normals = _load_ply(path, fmt)
    return CloudFile(format=fmt, cloud=cloud, had_normals=had_normals)


def save_cloud(cloud: PointCloud, path, format: CloudFormat = CloudFormat.PLY_BINARY_LE) -> None:
    """Write the cloud so that load_cloud reads it back (binary PLY is bit-exact)."""
    path = Path(path)
    if format is CloudFormat.XYZ:
        _save_xyz(cloud, path)
    elif format is CloudFormat.PLY_ASCII:
        _save_ply(cloud, path, binary=False)
    elif format is CloudFormat.PLY_BINARY_LE:
        _save_ply(cloud, path, binary=True)
    else:
        raise ValueError(f"unknown cloud format: {format!r}")


# ---------------------------------------------------------------- PLY reading

def _parse_ply_header(data: bytes, path: Path) -> tuple[list[_PlyElement], CloudFormat, int]:
    end = data.find(b"end_header")
    if end < 0:
        raise CloudParseError(f"{path}: missing end_header in PLY header")
    body_start = data.find(b"\n", end)
    if body_start < 0:
        raise CloudParseError(f"{path}: header is not newline-terminated")
    body_start += 1

    try:
        header_text = data[:body_start].decode("ascii")
    except UnicodeDecodeError as exc:
        raise CloudParseError(f"{path}: PLY header is not ASCII ({exc})") from None

    fmt: CloudFormat | None = None
    elements: list[_PlyElement] = []
    for lineno, raw in enumerate(header_text.splitlines(), start=1):
        line = raw.strip()
        if not line or line == "ply" or line.startswith(("comment", "obj_info")):
            continue
        if line == "end_header":
            break
        toks = line.split()
        if toks[0] == "format":
            if len(toks) != 3:
                raise CloudParseError(f"{path}:{lineno}: malformed format line {line!r}")
            if toks[1] == "ascii":
                fmt = CloudFormat.PLY_ASCII
            elif toks[1] == "binary_little_endian":
                fmt = CloudFormat.PLY_BINARY_LE
            elif toks[1] == "binary_big_endian":
                raise CloudParseError(f"{path}:{lineno}: big-endian binary PLY is not supported")
            else:
                raise CloudParseError(f"{path}:{lineno}: unknown PLY format {toks[1]!r}")
        elif toks[0] == "element":
            if len(toks) != 3:
                raise CloudParseError(f"{path}:{lineno}: malformed element line {line!r}")
            try:
                count = int(toks[2])
            except ValueError:
                raise CloudParseError(
                    f"{path}:{lineno}: element count {toks[2]!r} is not an integer"
                ) from None
            if count < 0:
                raise CloudParseError(f"{path}:{lineno}: negative element count {count}")
            elements.append(_PlyElement(toks[1], count, []))
        elif toks[0] == "property":
            if not elements:
                raise CloudParseError(f"{path}:{lineno}: property before any element")
            if toks[1] == "list":
                elements[-1].properties.append((toks[-1], "list"))
            else:
                if len(toks) != 3:
                    raise CloudParseError(f"{path}:{lineno}: malformed property line {line!r}")
                dtype = _PLY_DTYPES.get(toks[1])
                if dtype is None:
                    raise CloudParseError(f"{path}:{lineno}: unsupported property type {toks[1]!r}")
                elements[-1].properties.append((toks[2], dtype))
        else:
            raise CloudParseError(f"{path}:{lineno}: unexpected header line {line!r}")

    if fmt is None:
        raise CloudParseError(f"{path}: PLY header has no format line")
    return elements, fmt, body_start


def _vertex_columns(element: _PlyElement, path: Path) -> tuple[list[int], list[int] | None]:
    names = [name for name, _ in element.properties]
    if any(dtype == "list" for _, dtype in element.properties):
        raise CloudParseError(f"{path}: list-typed properties in the vertex element are unsupported")
    try:
        coord_cols = [names.index(p) for p in _COORD_PROPS]
    except ValueError:
        missing = [p for p in _COORD_PROPS if p not in names]
        raise CloudParseError(f"{path}: vertex element lacks coordinate properties {missing}") from None
    normal_cols = None
    if all(p in names for p in _NORMAL_PROPS):
        normal_cols = [names.index(p) for p in _NORMAL_PROPS]
    return coord_cols, normal_cols


def _finish_cloud(coords: np.ndarray, normals: np.ndarray | None, path: Path) -> tuple[PointCloud, bool]:
    bad = ~np.isfinite(coords).all(axis=1)
    if bad.any():
        raise CloudParseError(f"{path}: non-finite coordinates at vertex {int(np.argmax(bad))}")
    if normals is None:
        return PointCloud(coords), False
    if not np.isfinite(normals).all():
        bad_row = int(np.argmax(~np.isfinite(normals).all(axis=1)))
        raise CloudParseError(f"{path}: non-finite normal at vertex {bad_row}")
    lengths = np.linalg.norm(normals, axis=1)
    if np.any(lengths < 1e-12):
        raise CloudParseError(
            f"{path}: zero-length normal at vertex {int(np.argmax(lengths < 1e-12))}"
        )
    # renormalize only rows that violate the unit invariant, so that round
    # tripping a valid file never perturbs bits
    off = np.abs(lengths - 1.0) > 1e-6
    if off.any():
        normals = normals.copy()
        normals[off] /= lengths[off, None]
    return PointCloud(coords, normals), True


def _load_ply(path: Path, fmt: CloudFormat) -> tuple[PointCloud, bool]:
    data = path.read_bytes()
    elements, header_fmt, body_start = _parse_ply_header(data, path)
    if header_fmt is not fmt:
        fmt = header_fmt
    vertex = next((e for e in elements if e.name == "vertex"), None)
    if vertex is None:
        raise CloudParseError(f"{path}: PLY file has no vertex element")
    if vertex.count == 0:
        raise CloudParseError(f"{path}: vertex element is empty")
    for e in elements:
        if e.name != "vertex" and e.count:
            log.warning("%s: skipping PLY element %r (%d entries)", path, e.name, e.count)

    coord_cols, normal_cols = _vertex_columns(vertex, path)
    if fmt is CloudFormat.PLY_ASCII:
        rows = _read_ascii_vertex_rows(data[body_start:], elements, vertex, path)
    else:
        rows = _read_binary_vertex_rows(data[body_start:], elements, vertex, path)
    coords = rows[:, coord_cols]
    normals = rows[:, normal_cols] if normal_cols is not None else None
    return _finish_cloud(coords, normals, path)


def _read_ascii_vertex_rows(
    body: bytes, elements: list[_PlyElement], vertex: _PlyElement, path: Path
) -> np.ndarray:
    lines = body.decode("ascii", errors="replace").splitlines()
    lines = [ln for ln in lines if ln.strip()]
    pos = 0
    for e in elements:
        if e.name == "vertex":
            break
        # earlier elements are skipped line-by-line (one line per entry)
        pos += e.count
    if pos + vertex.count > len(lines):
        raise CloudParseError(
            f"{path}: truncated body, expected {vertex.count} vertex lines, found {len(lines) - pos}"
        )
    ncols = len(vertex.properties)
    out = np.empty((vertex.count, ncols))
    for i in range(vertex.count):
        toks = lines[pos + i].split()
        if len(toks) != ncols:
            raise CloudParseError(
                f"{path}: vertex line {i}: expected {ncols} values, got {len(toks)}"
            )
        try:
            out[i] = [float(t) for t in toks]
        except ValueError as exc:
            raise CloudParseError(f"{path}: vertex line {i}: {exc}") from None
    return out


def _read_binary_vertex_rows(
    body: bytes, elements: list[_PlyElement], vertex: _PlyElement, path: Path
) -> np.ndarray:
    offset = 0
    for e in elements:
        if e.name == "vertex":
            break
        if any(dtype == "list" for _, dtype in e.properties):
            raise CloudParseError(
                f"{path}: cannot skip list-typed element {e.name!r} before vertex data in binary PLY"
            )
        row = np.dtype([(f"f{i}", dt) for i, (_, dt) in enumerate(e.properties)])
        offset += row.itemsize * e.count
    row_dtype = np.dtype([(f"f{i}", dt) for i, (_, dt) in enumerate(vertex.properties)])
    needed = row_dtype.itemsize * vertex.count
    if len(body) - offset < needed:
        raise CloudParseError(
            f"{path}: truncated body at byte {offset + len(body) - offset}: "
            f"need {needed} bytes for {vertex.count} vertices, have {len(body) - offset}"
        )
    raw = np.frombuffer(body, dtype=row_dtype, count=vertex.count, offset=offset)
    out = np.empty((vertex.count, len(vertex.properties)))
    for i in range(len(vertex.properties)):
        out[:, i] = raw[f"f{i}"].astype(np.float64)
    return out


# ---------------------------------------------------------------- XYZ

def _load_xyz(path: Path) -> tuple[PointCloud, bool]:
    rows: list[list[float]] = []
    ncols: int | None = None
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            toks = stripped.split()
            if ncols is None:
                if len(toks) not in (3, 6):
                    raise CloudParseError(
                        f"{path}:{lineno}: expected 3 or 6 columns, got {len(toks)}"
                    )
                ncols = len(toks)
            elif len(toks) != ncols:
                raise CloudParseError(
                    f"{path}:{lineno}: expected {ncols} columns, got {len(toks)}"
                )
            try:
                rows.append([float(t) for t in toks])
            except ValueError as exc:
                raise CloudParseError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise CloudParseError(f"{path}: no data rows")
    arr = np.asarray(rows)
    normals = arr[:, 3:6] if ncols == 6 else None
    return _finish_cloud(arr[:, :3], normals, path)


# ---------------------------------------------------------------- writing

def _text_rows(values: np.ndarray) -> str:
    # repr of a Python float is the shortest string that parses back bit-exactly
    return "\n".join(" ".join(repr(v) for v in row) for row in values.tolist())


def _save_ply(cloud: PointCloud, path: Path, binary: bool) -> None:
    n = len(cloud)
    props = list(_COORD_PROPS) + (list(_NORMAL_PROPS) if cloud.has_normals else [])
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {n}")
    header.extend(f"property double {p}" for p in props)
    header.append("end_header")
    header_bytes = ("\n".join(header) + "\n").encode("ascii")

    data = cloud.points if not cloud.has_normals else np.hstack([cloud.points, cloud.normals])
    with open(path, "wb") as fh:
        fh.write(header_bytes)
        if binary:
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
        else:
            fh.write(_text_rows(data).encode("ascii"))
            fh.write(b"\n")


def _save_xyz(cloud: PointCloud, path: Path) -> None:
    data = cloud.points if not cloud.has_normals else np.hstack([cloud.points, cloud.normals])
    with open(path, "w", encoding="ascii") as fh:
        fh.write(_text_rows(data))
        fh.write("\n")
