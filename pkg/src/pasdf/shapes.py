"""Watertight generator meshes used by benchmarks and experiments.

Every generator returns a closed triangle mesh with outward windings
(positive signed volume), so surface sampling yields outward normals and
inside/outside labelling is consistent without per-shape cases.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidParameterError
from .geometry import Points
from .mesh import Faces, TriMesh

_GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0

_ICOSA_VERTICES = np.array(
    [
        (-1, _GOLDEN, 0), (1, _GOLDEN, 0), (-1, -_GOLDEN, 0), (1, -_GOLDEN, 0),
        (0, -1, _GOLDEN), (0, 1, _GOLDEN), (0, -1, -_GOLDEN), (0, 1, -_GOLDEN),
        (_GOLDEN, 0, -1), (_GOLDEN, 0, 1), (-_GOLDEN, 0, -1), (-_GOLDEN, 0, 1),
    ],
    dtype=np.float64,
)

_ICOSA_FACES = np.array(
    [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ],
    dtype=np.int64,
)


def _subdivided_unit_sphere(subdivisions: int) -> tuple[Points, Faces]:
    """Icosahedron refined by edge midpoints, vertices on the unit sphere."""
    if subdivisions < 0:
        raise InvalidParameterError("subdivisions must be non-negative")
    vertices = [v / np.linalg.norm(v) for v in _ICOSA_VERTICES]
    faces = [tuple(f) for f in _ICOSA_FACES]
    for _ in range(subdivisions):
        midpoint_of: dict[frozenset[int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = frozenset((a, b))
            if key not in midpoint_of:
                mid = vertices[a] + vertices[b]
                vertices.append(mid / np.linalg.norm(mid))
                midpoint_of[key] = len(vertices) - 1
            return midpoint_of[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = refined
    return np.asarray(vertices), np.asarray(faces, dtype=np.int64)


def sphere(
    radius: float = 0.5,
    center: tuple[float, float, float] = (0.0, 0.0, 0.0),
    subdivisions: int = 3,
) -> TriMesh:
    if radius <= 0.0:
        raise InvalidParameterError("radius must be positive")
    vertices, faces = _subdivided_unit_sphere(subdivisions)
    return TriMesh(vertices * radius + np.asarray(center), faces)


def blob(
    scale: float = 0.5,
    center: tuple[float, float, float] = (0.0, 0.0, 0.0),
    subdivisions: int = 3,
) -> TriMesh:
    """Star-shaped bumpy solid with no rotational symmetry.

    Mixed odd and even radial terms with generic coefficients, so pose
    recovery against it is well posed.  Radial scaling of a star-shaped
    surface preserves closedness and winding.
    """
    if scale <= 0.0:
        raise InvalidParameterError("scale must be positive")
    directions, faces = _subdivided_unit_sphere(subdivisions)
    x, y, z = directions.T
    polar = np.arccos(np.clip(z, -1.0, 1.0))
    radial = (
        1.0
        + 0.38 * x
        + 0.30 * y
        - 0.25 * z * x
        + 0.22 * y * z
        + 0.175 * np.cos(3.0 * polar)
        + 0.18 * x * y * z
    )
    vertices = directions * radial[:, None] * scale + np.asarray(center)
    return TriMesh(vertices, faces)


def box(
    extents: tuple[float, float, float] = (1.0, 0.6, 0.4),
    center: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> TriMesh:
    """Axis-aligned box; twelve triangles describe it exactly."""
    half = np.asarray(extents, dtype=np.float64) / 2.0
    if half.min() <= 0.0:
        raise InvalidParameterError("extents must be positive")
    corners = np.array(
        [
            (-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
            (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1),
        ],
        dtype=np.float64,
    )
    quads = (
        (0, 3, 2, 1),  # z = -1
        (4, 5, 6, 7),  # z = +1
        (0, 1, 5, 4),  # y = -1
        (1, 2, 6, 5),  # x = +1
        (2, 3, 7, 6),  # y = +1
        (3, 0, 4, 7),  # x = -1
    )
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return TriMesh(
        corners * half + np.asarray(center), np.asarray(faces, dtype=np.int64)
    )


def torus(
    major_radius: float = 0.35,
    minor_radius: float = 0.12,
    center: tuple[float, float, float] = (0.0, 0.0, 0.0),
    segments_major: int = 48,
    segments_minor: int = 24,
) -> TriMesh:
    if not 0.0 < minor_radius < major_radius:
        raise InvalidParameterError("need 0 < minor_radius < major_radius")
    if segments_major < 3 or segments_minor < 3:
        raise InvalidParameterError("torus needs at least 3 segments per ring")
    u = np.linspace(0.0, 2.0 * np.pi, segments_major, endpoint=False)
    v = np.linspace(0.0, 2.0 * np.pi, segments_minor, endpoint=False)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ring = major_radius + minor_radius * np.cos(vv)
    vertices = np.stack(
        [ring * np.cos(uu), ring * np.sin(uu), minor_radius * np.sin(vv)], axis=-1
    ).reshape(-1, 3)

    def at(i: int, j: int) -> int:
        return (i % segments_major) * segments_minor + (j % segments_minor)

    faces = []
    for i in range(segments_major):
        for j in range(segments_minor):
            a, b = at(i, j), at(i + 1, j)
            c, d = at(i + 1, j + 1), at(i, j + 1)
            faces += [(a, b, c), (a, c, d)]
    return TriMesh(
        vertices + np.asarray(center), np.asarray(faces, dtype=np.int64)
    )


def capsule(
    radius: float = 0.2,
    height: float = 0.5,
    center: tuple[float, float, float] = (0.0, 0.0, 0.0),
    segments: int = 32,
    cap_rings: int = 8,
) -> TriMesh:
    """Cylinder with hemispherical caps, axis along z.

    ``height`` is the straight section; total extent is height plus two
    radii.  Built as a surface of revolution of a pole-to-pole profile,
    so the seams between caps and side are welded by construction.
    """
    if radius <= 0.0 or height < 0.0:
        raise InvalidParameterError("radius must be positive, height non-negative")
    if segments < 3 or cap_rings < 1:
        raise InvalidParameterError("capsule needs 3 segments and 1 cap ring")
    half = height / 2.0
    lower = np.linspace(-np.pi / 2.0, 0.0, cap_rings + 1)
    upper = np.linspace(0.0, np.pi / 2.0, cap_rings + 1)
    profile = [(radius * np.cos(a), -half + radius * np.sin(a)) for a in lower]
    profile += [(radius * np.cos(a), half + radius * np.sin(a)) for a in upper]
    # Ends of the profile are the poles (radius zero by construction).
    # With zero height the cap seams coincide; drop the duplicate ring.
    profile = [
        p
        for i, p in enumerate(profile)
        if i == 0 or abs(p[0] - profile[i - 1][0]) + abs(p[1] - profile[i - 1][1]) > 1e-12
    ]
    theta = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    cos_t, sin_t = np.cos(theta), np.sin(theta)

    vertices = [np.array([0.0, 0.0, profile[0][1]])]
    for r, z in profile[1:-1]:
        ring = np.stack([r * cos_t, r * sin_t, np.full(segments, z)], axis=1)
        vertices.append(ring)
    vertices.append(np.array([0.0, 0.0, profile[-1][1]]))
    points = np.concatenate(
        [vertices[0][None]] + vertices[1:-1] + [vertices[-1][None]]
    )
    n_rings = len(profile) - 2
    top_pole = 1 + n_rings * segments

    def at(ring: int, j: int) -> int:
        return 1 + ring * segments + (j % segments)

    faces = []
    for j in range(segments):
        faces.append((0, at(0, j + 1), at(0, j)))
    for ring in range(n_rings - 1):
        for j in range(segments):
            a, b = at(ring, j), at(ring, j + 1)
            c, d = at(ring + 1, j + 1), at(ring + 1, j)
            faces += [(a, b, c), (a, c, d)]
    for j in range(segments):
        faces.append((top_pole, at(n_rings - 1, j), at(n_rings - 1, j + 1)))
    return TriMesh(
        points + np.asarray(center), np.asarray(faces, dtype=np.int64)
    )
