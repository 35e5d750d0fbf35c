"""Reading and writing PLY (ASCII, binary little-endian) and xyz text."""
from __future__ import annotations

import io
import sys
from pathlib import Path

import numpy as np

from .errors import ParseError
from .pointcloud import PointCloud

FORMATS = ("ply-ascii", "ply-binary-le", "xyz-text")

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_NORMAL_KEYS = ("nx", "ny", "nz")


def _read_bytes(path):
    if str(path) == "-":
        return sys.stdin.buffer.read()
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", path=path) from exc


def detect_format(path, data=None):
    data = _read_bytes(path) if data is None else data
    if data[:3] == b"ply":
        head = data[:512].split(b"\n")
        for line in head[1:]:
            parts = line.strip().split()
            if parts[:1] == [b"format"]:
                fmt = parts[1].decode(errors="replace") if len(parts) > 1 else ""
                if fmt == "ascii":
                    return "ply-ascii"
                if fmt == "binary_little_endian":
                    return "ply-binary-le"
                raise ParseError(f"unsupported PLY format {fmt!r}", path=path, line=2)
        raise ParseError("PLY header has no format line", path=path)
    return "xyz-text"


def read_bytes(path) -> bytes:
    """Raw file contents; ``-`` reads stdin."""
    return _read_bytes(path)


def load(path, format: str | None = None) -> PointCloud:
    """Load a point cloud; ``path`` may be ``-`` for stdin."""
    return parse(_read_bytes(path), path, format)


def parse(data: bytes, path="<bytes>", format: str | None = None) -> PointCloud:
    """Parse an in-memory file; ``path`` only labels error messages."""
    fmt = format or detect_format(path, data)
    if fmt not in FORMATS:
        raise ParseError(f"unknown format {fmt!r}; expected one of {FORMATS}", path=path)
    if fmt == "xyz-text":
        return _load_xyz(data, path)
    return _load_ply(data, path, fmt)


def _cloud_from_columns(cols, path):
    pts = np.column_stack([cols["x"], cols["y"], cols["z"]]).astype(np.float64)
    bad = ~np.isfinite(pts).all(axis=1)
    if bad.any():
        raise ParseError("non-finite coordinate", path=path, record=int(np.flatnonzero(bad)[0]))
    normals = None
    if all(k in cols for k in _NORMAL_KEYS):
        normals = np.column_stack([cols[k] for k in _NORMAL_KEYS]).astype(np.float64)
        if not np.isfinite(normals).all():
            raise ParseError("non-finite normal", path=path,
                             record=int(np.flatnonzero(~np.isfinite(normals).all(axis=1))[0]))
        length = np.linalg.norm(normals, axis=1)
        ok = length > 0
        if not ok.all():
            raise ParseError("zero-length normal", path=path, record=int(np.flatnonzero(~ok)[0]))
        # float32 storage cannot hold unit length to 1e-6; exact float64 normals pass through
        off = np.abs(length - 1.0) > 1e-12
        normals[off] = normals[off] / length[off, None]
    skip = {"x", "y", "z", *_NORMAL_KEYS}
    attrs = {k: np.asarray(v) for k, v in cols.items() if k not in skip}
    valid = None
    if "normal_valid" in attrs and normals is not None:
        valid = attrs.pop("normal_valid").astype(bool)
    return PointCloud(pts, normals, valid, attrs)


def _load_xyz(data, path):
    text = data.decode("utf-8", errors="replace")
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if width is None:
            width = len(parts)
            if width not in (3, 6):
                raise ParseError(f"expected 3 or 6 columns, got {width}", path=path, line=lineno)
        elif len(parts) != width:
            raise ParseError(f"expected {width} columns, got {len(parts)}", path=path, line=lineno)
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise ParseError("malformed number", path=path, line=lineno) from None
        if not all(np.isfinite(vals[:3])):
            raise ParseError("non-finite coordinate", path=path, line=lineno)
        rows.append(vals)
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, width or 3)
    cols = {"x": arr[:, 0], "y": arr[:, 1], "z": arr[:, 2]}
    if width == 6:
        cols.update(nx=arr[:, 3], ny=arr[:, 4], nz=arr[:, 5])
    return _cloud_from_columns(cols, path)


def _parse_header(data, path):
    end = data.find(b"end_header")
    if end < 0:
        raise ParseError("PLY header has no end_header", path=path)
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    elements = []
    for lineno, raw in enumerate(lines, start=1):
        parts = raw.split()
        if not parts or parts[0] in ("ply", "format", "comment", "obj_info"):
            continue
        if parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise ParseError(f"malformed element line {raw!r}", path=path, line=lineno)
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            if not elements:
                raise ParseError("property before any element", path=path, line=lineno)
            if parts[1] == "list":
                if elements[-1][0] == "vertex":
                    raise ParseError("list properties on vertices are not supported", path=path, line=lineno)
                elements[-1][2].append((parts[-1], None))
                continue
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise ParseError(f"malformed property line {raw!r}", path=path, line=lineno)
            elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise ParseError(f"unexpected header keyword {parts[0]!r}", path=path, line=lineno)
    if not elements or elements[0][0] != "vertex":
        raise ParseError("first PLY element must be 'vertex'", path=path)
    _, count, props = elements[0]
    names = [p[0] for p in props]
    for key in ("x", "y", "z"):
        if key not in names:
            raise ParseError(f"vertex element lacks property {key!r}", path=path)
    present = [k for k in _NORMAL_KEYS if k in names]
    if present and len(present) != 3:
        raise ParseError("vertex element has an incomplete normal (need nx, ny, nz)", path=path)
    return count, props, body_start, len(lines) + 1


def _load_ply(data, path, fmt):
    count, props, body_start, header_lines = _parse_header(data, path)
    if fmt == "ply-binary-le":
        dtype = np.dtype([(name, "<" + t) for name, t in props])
        need = dtype.itemsize * count
        body = data[body_start:]
        if len(body) < need:
            raise ParseError(
                f"binary body holds {len(body) // max(dtype.itemsize, 1)} of {count} vertex records",
                path=path, record=len(body) // max(dtype.itemsize, 1),
            )
        rec = np.frombuffer(body, dtype=dtype, count=count)
        cols = {name: rec[name].copy() for name, _ in props}
        return _cloud_from_columns(cols, path)
    lines = data[body_start:].decode("ascii", errors="replace").splitlines()
    if len(lines) < count:
        raise ParseError(f"expected {count} vertex lines, found {len(lines)}", path=path,
                         line=header_lines + len(lines) + 1)
    ncol = len(props)
    rows = np.empty((count, ncol), dtype=np.float64)
    for i in range(count):
        parts = lines[i].split()
        lineno = header_lines + 1 + i
        if len(parts) < ncol:
            raise ParseError(f"expected {ncol} values, got {len(parts)}", path=path, line=lineno, record=i)
        try:
            rows[i] = [float(p) for p in parts[:ncol]]
        except ValueError:
            raise ParseError("malformed number", path=path, line=lineno, record=i) from None
        if not np.isfinite(rows[i, :3]).all():
            raise ParseError("non-finite coordinate", path=path, line=lineno, record=i)
    cols = {}
    for j, (name, t) in enumerate(props):
        cols[name] = rows[:, j].astype(t)
    return _cloud_from_columns(cols, path)


def _columns_for_save(cloud: PointCloud, extra: dict | None):
    cols = [("x", cloud.points[:, 0]), ("y", cloud.points[:, 1]), ("z", cloud.points[:, 2])]
    if cloud.normals is not None:
        cols += [(k, cloud.normals[:, j]) for j, k in enumerate(_NORMAL_KEYS)]
        if cloud.normal_valid is not None and not cloud.normal_valid.all():
            cols.append(("normal_valid", cloud.normal_valid.astype(np.uint8)))
    attrs = dict(cloud.attributes)
    attrs.update(extra or {})
    for name in sorted(attrs):
        cols.append((name, np.asarray(attrs[name])))
    return cols


def _ply_type(arr):
    kind = arr.dtype
    if kind == np.bool_:
        return "uchar", np.uint8
    for ply, code in (("double", "f8"), ("float", "f4"), ("uchar", "u1"), ("char", "i1"),
                      ("ushort", "u2"), ("short", "i2"), ("uint", "u4"), ("int", "i4")):
        if kind == np.dtype(code):
            return ply, np.dtype("<" + code)
    if np.issubdtype(kind, np.integer):
        return "int", np.dtype("<i4")
    return "double", np.dtype("<f8")


def to_bytes(cloud: PointCloud, format: str = "ply-binary-le", extra: dict | None = None) -> bytes:
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}")
    if format == "xyz-text":
        arr = cloud.points if cloud.normals is None else np.hstack([cloud.points, cloud.normals])
        buf = io.StringIO()
        np.savetxt(buf, arr, fmt="%.17g")
        return buf.getvalue().encode()
    cols = _columns_for_save(cloud, extra)
    typed = [(name, *_ply_type(np.asarray(v)), np.asarray(v)) for name, v in cols]
    head = ["ply", "format " + ("ascii 1.0" if format == "ply-ascii" else "binary_little_endian 1.0"),
            f"element vertex {len(cloud)}"]
    head += [f"property {ply} {name}" for name, ply, _, _ in typed]
    head.append("end_header")
    header = ("\n".join(head) + "\n").encode("ascii")
    if format == "ply-binary-le":
        dtype = np.dtype([(name, dt) for name, _, dt, _ in typed])
        rec = np.empty(len(cloud), dtype=dtype)
        for name, _, _, values in typed:
            rec[name] = values
        return header + rec.tobytes()
    columns = [np.asarray(v) for *_, v in typed]
    lines = []
    for i in range(len(cloud)):
        lines.append(" ".join(repr(float(c[i])) if c.dtype.kind == "f" else str(int(c[i])) for c in columns))
    return header + ("\n".join(lines) + ("\n" if lines else "")).encode("ascii")


def save(cloud: PointCloud, path, format: str = "ply-binary-le", extra: dict | None = None) -> None:
    data = to_bytes(cloud, format, extra)
    if str(path) == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
        return
    Path(path).write_bytes(data)
