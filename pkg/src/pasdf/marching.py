"""Isosurface extraction by marching cubes.

The full 256-case triangle table is generated at import from first
principles: for each corner-sign configuration, isoline segments are
traced across every cube face (pairing each inside-to-outside boundary
crossing with the next outside-to-inside one along the face loop) and
chained into closed polygons, which are then fan-triangulated.  Because
the pairing rule depends only on a face's own four corner signs, two
cells sharing a face always agree on its isolines and the extracted
surface is crack-free.  Triangles wind so normals point toward
increasing field values.

Extraction itself is vectorized: cells are grouped by case index, edge
crossings are welded through canonical (cell, axis) grid-edge keys, and
positions come from linear interpolation along each crossed edge.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .encoding import EncodingConfig, positional_encode
from .errors import InvalidInputError, InvalidParameterError
from .geometry import F64, Points
from .mesh import Faces, TriMesh
from .network import SdfModel

_CORNERS = np.array(
    [
        (0, 0, 0),
        (1, 0, 0),
        (1, 1, 0),
        (0, 1, 0),
        (0, 0, 1),
        (1, 0, 1),
        (1, 1, 1),
        (0, 1, 1),
    ],
    dtype=np.int64,
)

_EDGES = (
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
)

# Corner loops wound counterclockwise as seen from outside the cube.
_FACE_LOOPS = (
    (0, 3, 2, 1),
    (4, 5, 6, 7),
    (0, 1, 5, 4),
    (1, 2, 6, 5),
    (2, 3, 7, 6),
    (3, 0, 4, 7),
)

_EDGE_OF_PAIR = {frozenset(pair): index for index, pair in enumerate(_EDGES)}


def _build_case_table() -> list[list[tuple[int, int, int]]]:
    """Triangles (as edge-index triples) for each of the 256 sign cases."""
    table: list[list[tuple[int, int, int]]] = []
    for case in range(256):
        inside = [(case >> corner) & 1 == 1 for corner in range(8)]
        # Directed isoline segments: from the edge where a face-loop walk
        # leaves the inside region to the edge where it re-enters.
        outgoing: dict[int, int] = {}
        for loop in _FACE_LOOPS:
            steps = []
            for position in range(4):
                a, b = loop[position], loop[(position + 1) % 4]
                if inside[a] != inside[b]:
                    steps.append((_EDGE_OF_PAIR[frozenset((a, b))], inside[a]))
            for index, (edge, leaving) in enumerate(steps):
                if not leaving:
                    continue
                for offset in range(1, len(steps)):
                    other_edge, other_leaving = steps[(index + offset) % len(steps)]
                    if not other_leaving:
                        outgoing[edge] = other_edge
                        break
        # Chain segments into closed polygons.
        triangles: list[tuple[int, int, int]] = []
        remaining = dict(outgoing)
        while remaining:
            start, nxt = remaining.popitem()
            polygon = [start]
            while nxt != start:
                polygon.append(nxt)
                nxt = remaining.pop(nxt)
            polygon.reverse()
            for k in range(1, len(polygon) - 1):
                triangles.append((polygon[0], polygon[k], polygon[k + 1]))
        table.append(triangles)
    return table


CASE_TRIANGLES = _build_case_table()

# Each cube edge as (cell offset of its low corner, axis it runs along).
_EDGE_CANONICAL = []
for _a, _b in _EDGES:
    _lo = np.minimum(_CORNERS[_a], _CORNERS[_b])
    _axis = int(np.flatnonzero(_CORNERS[_a] != _CORNERS[_b])[0])
    _EDGE_CANONICAL.append((_lo[0], _lo[1], _lo[2], _axis))
_EDGE_CANONICAL = np.array(_EDGE_CANONICAL, dtype=np.int64)


@dataclass(frozen=True)
class GridSpec:
    """Regular evaluation lattice over an axis-aligned box."""

    resolution: int = 128
    lower: tuple[float, float, float] = (0.0, 0.0, 0.0)
    upper: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        if self.resolution < 8:
            raise InvalidParameterError("grid resolution must be >= 8")
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise InvalidParameterError("grid bounds must be 3-vectors")
        if not np.isfinite(lo).all() or not np.isfinite(hi).all():
            raise InvalidParameterError("grid bounds must be finite")
        if (hi - lo).min() <= 0.0:
            raise InvalidParameterError("grid bounds are degenerate")

    @classmethod
    def for_cloud(
        cls, points: Points, resolution: int = 128, expand: float = 1.3
    ) -> "GridSpec":
        """Unit cube clipped to the expanded bounding box of a cloud.

        Points are expected in normalized coordinates; the expansion
        mirrors the query-sampling convention so the grid covers the same
        shell the model was trained on.
        """
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise InvalidInputError("points must be a non-empty (n, 3) array")
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        center = (lo + hi) / 2.0
        half = np.maximum((hi - lo) / 2.0 * expand, 1e-3)
        lower = np.clip(center - half, 0.0, 1.0)
        upper = np.clip(center + half, 0.0, 1.0)
        return cls(resolution, tuple(lower), tuple(upper))

    def axes(self) -> tuple[NDArray[F64], NDArray[F64], NDArray[F64]]:
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return tuple(
            np.linspace(lo[axis], hi[axis], self.resolution) for axis in range(3)
        )

    def spacing(self) -> NDArray[F64]:
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return (hi - lo) / (self.resolution - 1)

    def vertex_positions(self) -> Points:
        """All lattice vertices, x fastest nowhere: index order (i, j, k)."""
        ax, ay, az = self.axes()
        gx, gy, gz = np.meshgrid(ax, ay, az, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def evaluate_field(
    model: SdfModel,
    encoding: EncodingConfig,
    grid: GridSpec,
    chunk_size: int = 65536,
) -> NDArray[F64]:
    """Sample the model on every lattice vertex, shape (r, r, r).

    Chunked so a full-resolution grid never materialises the whole
    encoded batch at once; at default width and resolution this is the
    dominant cost of repair.
    """
    if chunk_size < 1:
        raise InvalidParameterError("chunk_size must be positive")
    positions = grid.vertex_positions()
    values = np.empty(len(positions), dtype=np.float64)
    for start in range(0, len(positions), chunk_size):
        chunk = positions[start : start + chunk_size]
        values[start : start + len(chunk)] = model.forward(
            positional_encode(chunk, encoding)
        )
    r = grid.resolution
    return values.reshape(r, r, r)


def marching_cubes(
    field: NDArray[F64],
    grid: GridSpec,
    iso: float = 0.0,
    *,
    close_boundary: bool = False,
) -> TriMesh:
    """Extract the iso-level surface of a sampled scalar field.

    The field must be sampled on the grid's lattice, shape (r, r, r) in
    (i, j, k) index order.  A field of uniform sign yields an empty mesh.

    With ``close_boundary`` everything beyond the grid counts as far
    outside, so a sub-level region reaching the grid box gets capped on
    the boundary planes instead of left open there.  Surfaces interior
    to the grid are unaffected, as is the uniform-sign rule.
    """
    values = np.ascontiguousarray(field, dtype=np.float64)
    r = grid.resolution
    if values.shape != (r, r, r):
        raise InvalidInputError(
            f"field shape {values.shape} does not match grid resolution {r}"
        )
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        i, j, k = bad[0]
        raise InvalidInputError(
            f"non-finite field value at grid vertex ({i}, {j}, {k})"
        )

    padded = close_boundary and bool((values < iso).any() and (values >= iso).any())
    if padded:
        values = _pad_outside(values)
        r += 2

    inside = values < iso
    n_cells = r - 1
    case_index = np.zeros((n_cells, n_cells, n_cells), dtype=np.uint8)
    for corner, (dx, dy, dz) in enumerate(_CORNERS):
        case_index |= (
            inside[dx : dx + n_cells, dy : dy + n_cells, dz : dz + n_cells]
            .astype(np.uint8)
            << corner
        )

    active = np.argwhere((case_index != 0) & (case_index != 255))
    if active.size == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    cases = case_index[active[:, 0], active[:, 1], active[:, 2]]
    # Gather (cell, edge) triangle corners grouped by case value.
    tri_cells: list[NDArray[np.int_]] = []
    tri_edges: list[NDArray[np.int_]] = []
    for case in np.unique(cases):
        triangles = CASE_TRIANGLES[case]
        if not triangles:
            continue
        cells_here = active[cases == case]
        edge_triples = np.asarray(triangles, dtype=np.int64)
        tri_cells.append(np.repeat(cells_here, len(edge_triples), axis=0))
        tri_edges.append(np.tile(edge_triples, (len(cells_here), 1)))
    if not tri_cells:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    cells = np.concatenate(tri_cells)
    edges = np.concatenate(tri_edges)

    # Canonical global key for every referenced grid edge: the lattice
    # index of its low corner plus the axis it runs along.
    canon = _EDGE_CANONICAL[edges.ravel()]
    corner_index = cells[:, None, :].repeat(3, axis=1).reshape(-1, 3) + canon[:, :3]
    keys = (
        (corner_index[:, 0] * r + corner_index[:, 1]) * r + corner_index[:, 2]
    ) * 3 + canon[:, 3]
    unique_keys, face_indices = np.unique(keys, return_inverse=True)
    faces = face_indices.reshape(-1, 3)

    # Interpolate one vertex per unique crossed edge.
    axis = (unique_keys % 3).astype(np.int64)
    flat = unique_keys // 3
    k_idx = flat % r
    j_idx = (flat // r) % r
    i_idx = flat // (r * r)
    low = np.stack([i_idx, j_idx, k_idx], axis=1)
    step = np.zeros_like(low)
    step[np.arange(len(low)), axis] = 1
    high = low + step
    f_low = values[low[:, 0], low[:, 1], low[:, 2]]
    f_high = values[high[:, 0], high[:, 1], high[:, 2]]
    t = (iso - f_low) / (f_high - f_low)
    spacing = grid.spacing()
    origin = np.asarray(grid.lower)
    # Padded lattice indices are shifted by one against the caller's
    # grid; undoing the shift here keeps interior vertex arithmetic (and
    # so their positions) identical with and without boundary closure.
    shift = 1 if padded else 0
    positions = origin + ((low - shift) + t[:, None] * step) * spacing

    faces = _contract_slivers(positions, faces)
    if faces.size == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    used, renumbered = np.unique(faces.ravel(), return_inverse=True)
    return TriMesh(positions[used], renumbered.reshape(-1, 3).astype(np.int64))


# Virtual node value for the layer just beyond a closed boundary.  Large
# enough that interpolation against it rounds the crossing onto the
# boundary node itself, small enough to stay finite in the t arithmetic.
_FAR_OUTSIDE = 1e30


def _pad_outside(values: NDArray[F64]) -> NDArray[F64]:
    """Wrap the field in one lattice layer of far-outside values."""
    r = values.shape[0] + 2
    padded = np.full((r, r, r), _FAR_OUTSIDE, dtype=np.float64)
    padded[1:-1, 1:-1, 1:-1] = values
    return padded


# Contract faces below this area rather than emit them; one decade of
# margin over the mesh validator's degenerate-face floor.
_SLIVER_AREA = 1e-11


def _contract_slivers(positions: Points, faces: Faces) -> Faces:
    """Collapse near-zero-area faces onto their shortest edge.

    Crossings that land on (or within float noise of) a lattice point
    produce triangles too thin for mesh validation.  Deleting them would
    open holes, so instead each one's shortest edge is contracted, which
    also collapses the matching face on the far side of that edge and
    keeps the surface closed.  Contractions move vertices by at most the
    contracted edge length, which is bounded by the sliver size itself.
    """
    while True:
        tri = positions[faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        small = np.flatnonzero(0.5 * np.linalg.norm(cross, axis=1) < _SLIVER_AREA)
        if small.size == 0:
            return faces
        # One disjoint batch of contractions per pass; every pass retires
        # at least one vertex, so the loop terminates.
        merge_into = np.arange(len(positions))
        touched = np.zeros(len(positions), dtype=bool)
        for a, b, c in faces[small]:
            if touched[a] or touched[b] or touched[c]:
                continue
            pairs = ((a, b), (b, c), (c, a))
            lengths = [
                np.linalg.norm(positions[p] - positions[q]) for p, q in pairs
            ]
            keep_vertex, drop_vertex = pairs[int(np.argmin(lengths))]
            merge_into[drop_vertex] = keep_vertex
            touched[a] = touched[b] = touched[c] = True
        faces = merge_into[faces]
        faces = faces[
            (faces[:, 0] != faces[:, 1])
            & (faces[:, 1] != faces[:, 2])
            & (faces[:, 2] != faces[:, 0])
        ]
        if faces.size == 0:
            return faces
