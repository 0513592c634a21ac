"""PLY and OBJ readers and writers.

PLY covers clouds and score maps (binary little-endian by default, ASCII
accepted on read); OBJ covers triangle meshes.  Only the properties this
pipeline produces are written; readers tolerate and ignore extras.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .errors import InvalidInputError
from .geometry import F64, PointCloud, Points
from .mesh import Faces, TriMesh

SCORE_PROPERTY = "anomaly_score"

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass(frozen=True)
class PlyContent:
    points: Points
    normals: Points | None
    scores: NDArray[np.float32] | None
    faces: Faces | None


def write_cloud_ply(
    path: str | Path,
    cloud: PointCloud,
    scores: NDArray | None = None,
    binary: bool = True,
) -> None:
    """Write a cloud, optionally with normals and a per-point anomaly score."""
    if scores is not None:
        scores = np.asarray(scores, dtype=np.float32)
        if scores.shape != (len(cloud),):
            raise InvalidInputError(
                f"scores shape {scores.shape} does not match cloud size {len(cloud)}"
            )
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {len(cloud)}")
    fields: list[tuple[str, str]] = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    for axis in "xyz":
        header.append(f"property double {axis}")
    if cloud.normals is not None:
        for axis in "xyz":
            header.append(f"property double n{axis}")
        fields += [("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")]
    if scores is not None:
        header.append(f"property float {SCORE_PROPERTY}")
        fields.append((SCORE_PROPERTY, "<f4"))
    header.append("end_header")

    record = np.zeros(len(cloud), dtype=np.dtype(fields))
    record["x"], record["y"], record["z"] = cloud.points.T
    if cloud.normals is not None:
        record["nx"], record["ny"], record["nz"] = cloud.normals.T
    if scores is not None:
        record[SCORE_PROPERTY] = scores

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(record.tobytes())
        else:
            columns = [record[name] for name, _ in fields]
            for row in zip(*columns):
                fh.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))


def _parse_header(fh: io.BufferedReader) -> tuple[str, list[tuple[str, int, list]]]:
    line = fh.readline().strip()
    if line != b"ply":
        raise InvalidInputError("not a PLY file (missing magic)")
    fmt = ""
    elements: list[tuple[str, int, list]] = []
    while True:
        raw = fh.readline()
        if not raw:
            raise InvalidInputError("truncated PLY header")
        line = raw.decode("ascii").strip()
        if not line or line.startswith("comment"):
            continue
        if line == "end_header":
            break
        parts = line.split()
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise InvalidInputError("PLY property before any element")
            if parts[1] == "list":
                elements[-1][2].append(("list", parts[2], parts[3], parts[4]))
            else:
                elements[-1][2].append(("scalar", parts[1], parts[2]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise InvalidInputError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def _read_vertex_block(fh, fmt: str, count: int, props: list) -> dict[str, NDArray]:
    names = []
    dtype_fields = []
    for prop in props:
        if prop[0] != "scalar":
            raise InvalidInputError("list property on vertex element is not supported")
        _, type_name, name = prop
        if type_name not in _PLY_TYPES:
            raise InvalidInputError(f"unsupported PLY type {type_name!r}")
        names.append(name)
        dtype_fields.append((name, "<" + _PLY_TYPES[type_name]))
    dtype = np.dtype(dtype_fields)
    if fmt == "binary_little_endian":
        data = np.frombuffer(fh.read(dtype.itemsize * count), dtype=dtype, count=count)
    else:
        rows = [fh.readline().decode("ascii").split() for _ in range(count)]
        data = np.zeros(count, dtype=dtype)
        for col, name in enumerate(names):
            data[name] = np.asarray([row[col] for row in rows], dtype=np.float64)
    return {name: np.ascontiguousarray(data[name]) for name in names}


def _read_face_block(fh, fmt: str, count: int, props: list) -> Faces:
    if len(props) != 1 or props[0][0] != "list":
        raise InvalidInputError("face element must carry a single vertex list property")
    _, count_type, index_type, _name = props[0]
    faces: list[list[int]] = []
    if fmt == "binary_little_endian":
        count_dt = np.dtype("<" + _PLY_TYPES[count_type])
        index_dt = np.dtype("<" + _PLY_TYPES[index_type])
        for _ in range(count):
            n = int(np.frombuffer(fh.read(count_dt.itemsize), dtype=count_dt)[0])
            idx = np.frombuffer(fh.read(index_dt.itemsize * n), dtype=index_dt)
            faces.extend(_fan(idx))
    else:
        for _ in range(count):
            row = fh.readline().decode("ascii").split()
            n = int(row[0])
            faces.extend(_fan([int(v) for v in row[1 : 1 + n]]))
    return np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def _fan(indices) -> list[list[int]]:
    indices = list(int(v) for v in indices)
    if len(indices) < 3:
        raise InvalidInputError("face with fewer than 3 vertices")
    return [[indices[0], indices[i], indices[i + 1]] for i in range(1, len(indices) - 1)]


def read_ply(path: str | Path) -> PlyContent:
    with open(path, "rb") as fh:
        fmt, elements = _parse_header(fh)
        vertex_data: dict[str, NDArray] | None = None
        faces: Faces | None = None
        for name, count, props in elements:
            if name == "vertex":
                vertex_data = _read_vertex_block(fh, fmt, count, props)
            elif name == "face":
                faces = _read_face_block(fh, fmt, count, props)
            else:
                _skip_element(fh, fmt, count, props)
    if vertex_data is None or any(axis not in vertex_data for axis in "xyz"):
        raise InvalidInputError(f"{path}: PLY file has no x/y/z vertex data")
    points = np.column_stack(
        [vertex_data["x"], vertex_data["y"], vertex_data["z"]]
    ).astype(np.float64)
    normals = None
    if all(f"n{axis}" in vertex_data for axis in "xyz"):
        normals = np.column_stack(
            [vertex_data["nx"], vertex_data["ny"], vertex_data["nz"]]
        ).astype(np.float64)
        lengths = np.linalg.norm(normals, axis=1)
        safe = lengths > 1e-12
        normals[safe] /= lengths[safe, None]
        normals[~safe] = (0.0, 0.0, 1.0)
    scores = None
    if SCORE_PROPERTY in vertex_data:
        scores = vertex_data[SCORE_PROPERTY].astype(np.float32)
    return PlyContent(points=points, normals=normals, scores=scores, faces=faces)


def _skip_element(fh, fmt: str, count: int, props: list) -> None:
    if fmt == "ascii":
        for _ in range(count):
            fh.readline()
        return
    if any(p[0] == "list" for p in props):
        for _ in range(count):
            for prop in props:
                if prop[0] == "list":
                    count_dt = np.dtype("<" + _PLY_TYPES[prop[1]])
                    n = int(np.frombuffer(fh.read(count_dt.itemsize), dtype=count_dt)[0])
                    fh.read(np.dtype("<" + _PLY_TYPES[prop[2]]).itemsize * n)
                else:
                    fh.read(np.dtype("<" + _PLY_TYPES[prop[1]]).itemsize)
    else:
        row_size = sum(np.dtype("<" + _PLY_TYPES[p[1]]).itemsize for p in props)
        fh.read(row_size * count)


def write_obj(path: str | Path, mesh: TriMesh) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def read_obj(path: str | Path) -> TriMesh:
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                vertices.append([float(v) for v in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                idx = [i - 1 if i > 0 else len(vertices) + i for i in idx]
                faces.extend(_fan(idx))
    if not vertices:
        raise InvalidInputError(f"{path}: OBJ file has no vertices")
    return TriMesh(np.asarray(vertices, dtype=np.float64), np.asarray(faces, dtype=np.int64))
