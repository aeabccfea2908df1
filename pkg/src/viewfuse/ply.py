"""Minimal binary little-endian PLY reader/writer.

Covers the property set this package emits: float/double/int/uchar vertex
properties plus one uchar-counted int vertex_indices face list. Not a general
PLY parser.
"""

from __future__ import annotations

import numpy as np

from .errors import MalformedHeaderError

_TYPE_MAP = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
    "uchar": "u1",
    "uint8": "u1",
    "char": "i1",
    "int8": "i1",
    "short": "<i2",
    "ushort": "<u2",
}


def write_ply(path, vertex_props: dict[str, np.ndarray], triangles: np.ndarray | None = None) -> None:
    """Write a binary PLY. ``vertex_props`` maps property name -> 1-D array;
    all arrays must share length. Arrays keep their dtype (float32/float64/
    int32/uint8 supported)."""
    names = list(vertex_props)
    n = len(vertex_props[names[0]])
    cols = []
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    dtype_fields = []
    for name in names:
        arr = np.ascontiguousarray(vertex_props[name])
        if len(arr) != n:
            raise ValueError(f"property {name} has length {len(arr)}, expected {n}")
        kind = {
            np.dtype(np.float32): "float",
            np.dtype(np.float64): "double",
            np.dtype(np.int32): "int",
            np.dtype(np.uint8): "uchar",
        }.get(arr.dtype)
        if kind is None:
            raise ValueError(f"unsupported dtype {arr.dtype} for property {name}")
        header.append(f"property {kind} {name}")
        dtype_fields.append((name, _TYPE_MAP[kind]))
        cols.append(arr)
    tri = None
    if triangles is not None:
        tri = np.ascontiguousarray(triangles, dtype=np.int32)
        header.append(f"element face {len(tri)}")
        header.append("property list uchar int vertex_indices")
    header.append("end_header")

    vertex_rec = np.empty(n, dtype=np.dtype(dtype_fields))
    for name, arr in zip(names, cols):
        vertex_rec[name] = arr

    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(vertex_rec.tobytes())
        if tri is not None:
            face_rec = np.empty(len(tri), dtype=np.dtype([("count", "u1"), ("idx", "<i4", (3,))]))
            face_rec["count"] = 3
            face_rec["idx"] = tri
            f.write(face_rec.tobytes())


def read_ply(path) -> tuple[dict[str, np.ndarray], np.ndarray | None]:
    """Read a binary PLY written by :func:`write_ply` (or compatible).

    Returns ``(vertex_props, triangles)``; triangles is None when the file has
    no face element.
    """
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"ply":
            raise MalformedHeaderError(f"{path}: not a PLY file (magic {magic!r})")
        fmt = f.readline().strip()
        if fmt != b"format binary_little_endian 1.0":
            raise MalformedHeaderError(f"{path}: unsupported format line {fmt!r}")
        n_vertex = 0
        n_face = 0
        vertex_fields: list[tuple[str, str]] = []
        element = None
        face_list_dtype = None
        while True:
            line = f.readline()
            if not line:
                raise MalformedHeaderError(f"{path}: truncated header")
            parts = line.strip().decode("ascii").split()
            if not parts or parts[0] == "comment":
                continue
            if parts[0] == "end_header":
                break
            if parts[0] == "element":
                element = parts[1]
                if element == "vertex":
                    n_vertex = int(parts[2])
                elif element == "face":
                    n_face = int(parts[2])
                else:
                    raise MalformedHeaderError(f"{path}: unsupported element {element}")
            elif parts[0] == "property":
                if element == "vertex":
                    if parts[1] == "list":
                        raise MalformedHeaderError(f"{path}: list property on vertex element")
                    if parts[1] not in _TYPE_MAP:
                        raise MalformedHeaderError(f"{path}: unsupported type {parts[1]}")
                    vertex_fields.append((parts[2], _TYPE_MAP[parts[1]]))
                elif element == "face":
                    if parts[1] != "list" or parts[2] not in ("uchar", "uint8"):
                        raise MalformedHeaderError(f"{path}: unsupported face property {line!r}")
                    face_list_dtype = _TYPE_MAP[parts[3]]

        vertex_rec = np.frombuffer(f.read(n_vertex * np.dtype(vertex_fields).itemsize),
                                   dtype=np.dtype(vertex_fields), count=n_vertex)
        props = {name: np.array(vertex_rec[name]) for name, _ in vertex_fields}
        triangles = None
        if n_face:
            item = np.dtype([("count", "u1"), ("idx", face_list_dtype, (3,))])
            face_rec = np.frombuffer(f.read(n_face * item.itemsize), dtype=item, count=n_face)
            if face_rec.size != n_face or np.any(face_rec["count"] != 3):
                raise MalformedHeaderError(f"{path}: only triangle faces are supported")
            triangles = np.array(face_rec["idx"], dtype=np.int32)
        return props, triangles
