"""Tests for isosurface extraction and the evaluation grid."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pasdf.errors import InvalidInputError, InvalidParameterError
from pasdf.marching import (
    CASE_TRIANGLES,
    GridSpec,
    evaluate_field,
    marching_cubes,
)
from pasdf.mesh import check_watertight, signed_volume


def sample_grid(grid: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ax, ay, az = grid.axes()
    return np.meshgrid(ax, ay, az, indexing="ij")


def sphere_field(grid: GridSpec, center: np.ndarray, radius: float) -> np.ndarray:
    gx, gy, gz = sample_grid(grid)
    return (
        np.sqrt((gx - center[0]) ** 2 + (gy - center[1]) ** 2 + (gz - center[2]) ** 2)
        - radius
    )


class TestGridSpec:
    def test_axes_span_bounds(self) -> None:
        grid = GridSpec(16, (0.1, 0.2, 0.3), (0.9, 0.8, 0.7))
        ax, ay, az = grid.axes()
        assert len(ax) == 16
        assert ax[0] == pytest.approx(0.1) and ax[-1] == pytest.approx(0.9)
        assert ay[0] == pytest.approx(0.2) and ay[-1] == pytest.approx(0.8)
        assert az[0] == pytest.approx(0.3) and az[-1] == pytest.approx(0.7)

    def test_spacing(self) -> None:
        grid = GridSpec(11, (0.0, 0.0, 0.0), (1.0, 0.5, 2.0))
        np.testing.assert_allclose(grid.spacing(), [0.1, 0.05, 0.2])

    def test_vertex_positions_index_order(self) -> None:
        grid = GridSpec(8)
        positions = grid.vertex_positions()
        assert positions.shape == (512, 3)
        ax = grid.axes()[0]
        # Row-major (i, j, k): the k axis varies fastest.
        np.testing.assert_allclose(positions[1], [ax[0], ax[0], ax[1]])
        np.testing.assert_allclose(positions[8], [ax[0], ax[1], ax[0]])
        np.testing.assert_allclose(positions[64], [ax[1], ax[0], ax[0]])

    def test_rejects_small_resolution(self) -> None:
        with pytest.raises(InvalidParameterError):
            GridSpec(7)

    def test_rejects_degenerate_bounds(self) -> None:
        with pytest.raises(InvalidParameterError):
            GridSpec(16, (0.0, 0.0, 0.0), (1.0, 0.0, 1.0))
        with pytest.raises(InvalidParameterError):
            GridSpec(16, (0.2, 0.0, 0.0), (0.1, 1.0, 1.0))

    def test_rejects_non_finite_bounds(self) -> None:
        with pytest.raises(InvalidParameterError):
            GridSpec(16, (0.0, 0.0, np.nan), (1.0, 1.0, 1.0))

    def test_for_cloud_expands_and_clips(self) -> None:
        points = np.array([[0.4, 0.4, 0.4], [0.6, 0.6, 0.9]])
        grid = GridSpec.for_cloud(points, resolution=16, expand=1.3)
        lower = np.asarray(grid.lower)
        upper = np.asarray(grid.upper)
        # Expanded about the bbox center by 1.3.
        np.testing.assert_allclose(lower[:2], 0.5 - 0.1 * 1.3)
        np.testing.assert_allclose(upper[:2], 0.5 + 0.1 * 1.3)
        np.testing.assert_allclose(lower[2], 0.65 - 0.25 * 1.3)
        np.testing.assert_allclose(upper[2], 0.65 + 0.25 * 1.3)
        # A cloud reaching the cube edge clips to the unit cube.
        clipped = GridSpec.for_cloud(
            np.array([[0.05, 0.5, 0.5], [0.99, 0.5, 0.5]]), resolution=16
        )
        assert clipped.lower[0] == 0.0
        assert clipped.upper[0] == 1.0

    def test_for_cloud_covers_cloud(self) -> None:
        rng = np.random.default_rng(3)
        points = rng.uniform(0.2, 0.8, (50, 3))
        grid = GridSpec.for_cloud(points, resolution=16)
        assert (points >= np.asarray(grid.lower)).all()
        assert (points <= np.asarray(grid.upper)).all()


class TestCaseTable:
    def test_trivial_cases_empty(self) -> None:
        assert CASE_TRIANGLES[0] == []
        assert CASE_TRIANGLES[255] == []
        assert all(CASE_TRIANGLES[case] for case in range(1, 255))

    def test_single_corner_is_one_triangle(self) -> None:
        # One inside corner clips one cube corner: a single triangle on
        # the three edges meeting there.
        for corner in range(8):
            triangles = CASE_TRIANGLES[1 << corner]
            assert len(triangles) == 1

    def test_triangle_count_bounded(self) -> None:
        assert max(len(t) for t in CASE_TRIANGLES) == 5

    def test_referenced_edges_are_crossed(self) -> None:
        # Every edge a case references must separate an inside corner
        # from an outside one, or interpolation would divide by zero.
        from pasdf.marching import _EDGES

        for case in range(256):
            inside = [(case >> c) & 1 == 1 for c in range(8)]
            for triangle in CASE_TRIANGLES[case]:
                for edge in triangle:
                    a, b = _EDGES[edge]
                    assert inside[a] != inside[b]


class TestMarchingCubes:
    def test_axis_plane_is_exact(self) -> None:
        grid = GridSpec(32)
        gx = sample_grid(grid)[0]
        mesh = marching_cubes(gx - 0.437, grid)
        assert len(mesh.faces) > 0
        np.testing.assert_allclose(mesh.vertices[:, 0], 0.437, atol=1e-9)
        # Normals follow increasing field values.
        np.testing.assert_allclose(mesh.face_normals[:, 0], 1.0, atol=1e-9)

    def test_tilted_plane_is_exact(self) -> None:
        grid = GridSpec(24)
        normal = np.array([1.0, 2.0, -0.5])
        normal /= np.linalg.norm(normal)
        gx, gy, gz = sample_grid(grid)
        field = (gx - 0.5) * normal[0] + (gy - 0.5) * normal[1] + (gz - 0.5) * normal[2]
        mesh = marching_cubes(field - 0.07, grid)
        residual = (mesh.vertices - 0.5) @ normal - 0.07
        # Linear fields are reproduced exactly by linear interpolation.
        assert np.abs(residual).max() < 1e-9
        assert (mesh.face_normals @ normal).min() > 1.0 - 1e-9

    def test_sphere_watertight_and_oriented(self) -> None:
        grid = GridSpec(64)
        center = np.array([0.5, 0.5, 0.5])
        mesh = marching_cubes(sphere_field(grid, center, 0.3), grid)
        watertight, open_edges = check_watertight(mesh)
        assert watertight, f"{open_edges} open edges"
        face_centers = mesh.vertices[mesh.faces].mean(axis=1)
        outward = np.einsum(
            "ij,ij->i", mesh.face_normals, face_centers - center
        )
        assert (outward > 0).all()

    def test_sphere_volume(self) -> None:
        grid = GridSpec(64)
        mesh = marching_cubes(sphere_field(grid, np.full(3, 0.5), 0.3), grid)
        exact = 4.0 / 3.0 * np.pi * 0.3**3
        assert signed_volume(mesh) == pytest.approx(exact, rel=5e-3)

    def test_sphere_radial_error_small(self) -> None:
        grid = GridSpec(64)
        center = np.full(3, 0.5)
        mesh = marching_cubes(sphere_field(grid, center, 0.3), grid)
        radial = np.linalg.norm(mesh.vertices - center, axis=1) - 0.3
        spacing = grid.spacing().max()
        # Linear interpolation of a smooth field: error well under a cell.
        assert np.abs(radial).max() < 0.25 * spacing

    def test_convergence_with_resolution(self) -> None:
        center = np.full(3, 0.5)
        errors = []
        for resolution in (16, 32, 64):
            grid = GridSpec(resolution)
            mesh = marching_cubes(sphere_field(grid, center, 0.3), grid)
            radial = np.linalg.norm(mesh.vertices - center, axis=1) - 0.3
            errors.append(np.sqrt((radial**2).mean()))
        assert errors[0] > errors[1] > errors[2]
        # Roughly second order: each doubling should cut the error by
        # closer to 4x than 2x.
        assert errors[0] / errors[2] > 8.0

    def test_nonzero_iso_level(self) -> None:
        grid = GridSpec(48)
        center = np.full(3, 0.5)
        mesh = marching_cubes(sphere_field(grid, center, 0.2), grid, iso=0.1)
        radial = np.linalg.norm(mesh.vertices - center, axis=1)
        np.testing.assert_allclose(radial, 0.3, atol=2e-3)

    def test_uniform_field_gives_empty_mesh(self) -> None:
        grid = GridSpec(8)
        for value in (-1.0, 1.0):
            mesh = marching_cubes(np.full((8, 8, 8), value), grid)
            assert len(mesh.vertices) == 0
            assert len(mesh.faces) == 0

    def test_crossing_exactly_on_node(self) -> None:
        # A plane sitting exactly on a lattice layer: vertices land on
        # the nodes and degenerate triangles are filtered, not emitted.
        grid = GridSpec(17)
        gx = sample_grid(grid)[0]
        x0 = grid.axes()[0][8]
        mesh = marching_cubes(gx - x0, grid)
        assert len(mesh.faces) > 0
        np.testing.assert_allclose(mesh.vertices[:, 0], x0, atol=0.0)

    def test_vertices_inside_bounds(self) -> None:
        grid = GridSpec(16, (0.2, 0.1, 0.0), (0.8, 0.9, 1.0))
        gx, gy, gz = sample_grid(grid)
        field = (gx - 0.5) ** 2 + (gy - 0.5) ** 2 + (gz - 0.5) ** 2 - 0.04
        mesh = marching_cubes(field, grid)
        assert (mesh.vertices >= np.asarray(grid.lower) - 1e-12).all()
        assert (mesh.vertices <= np.asarray(grid.upper) + 1e-12).all()

    def test_vertex_field_values_near_iso(self) -> None:
        # Extracted vertices should sit where the trilinear field is
        # near the level: |f| at a vertex is bounded by the local field
        # variation across one cell.
        grid = GridSpec(32)
        center = np.full(3, 0.5)
        mesh = marching_cubes(sphere_field(grid, center, 0.3), grid)
        f = np.linalg.norm(mesh.vertices - center, axis=1) - 0.3
        assert np.abs(f).max() < 2.0 * grid.spacing().max()

    def test_deterministic(self) -> None:
        grid = GridSpec(32)
        rng = np.random.default_rng(11)
        field = sphere_field(grid, np.full(3, 0.5), 0.3)
        field += 0.01 * rng.standard_normal(field.shape)
        first = marching_cubes(field, grid)
        second = marching_cubes(field, grid)
        assert np.array_equal(first.vertices, second.vertices)
        assert np.array_equal(first.faces, second.faces)

    def test_blob_field_watertight(self) -> None:
        # Overlapping gaussian blobs exercise many case pairs, including
        # the ambiguous-face ones; watertightness of the closed surface
        # proves neighbouring cells agree on every shared face.
        rng = np.random.default_rng(5)
        grid = GridSpec(12)
        gx, gy, gz = sample_grid(grid)
        bumps = np.zeros((12, 12, 12))
        for _ in range(4):
            center = rng.uniform(0.25, 0.75, 3)
            bumps += np.exp(
                -(
                    (gx - center[0]) ** 2
                    + (gy - center[1]) ** 2
                    + (gz - center[2]) ** 2
                )
                / 0.02
            )
        # Negated so the blobs are the inside; the level is never
        # reached on the grid boundary, so the surface is closed.
        assert bumps[0].max() < 0.5 and bumps[-1].max() < 0.5
        mesh = marching_cubes(-bumps, grid, iso=-0.5)
        watertight, open_edges = check_watertight(mesh)
        assert len(mesh.faces) > 0
        assert watertight, f"{open_edges} open edges"

    def test_rejects_wrong_shape(self) -> None:
        grid = GridSpec(16)
        with pytest.raises(InvalidInputError, match="shape"):
            marching_cubes(np.zeros((8, 8, 8)), grid)

    def test_rejects_non_finite_field_naming_vertex(self) -> None:
        grid = GridSpec(8)
        field = np.ones((8, 8, 8))
        field[2, 5, 7] = np.nan
        with pytest.raises(InvalidInputError, match=r"\(2, 5, 7\)"):
            marching_cubes(field, grid)

    @given(
        st.floats(0.12, 0.35),
        st.tuples(
            st.floats(0.4, 0.6), st.floats(0.4, 0.6), st.floats(0.4, 0.6)
        ),
    )
    def test_random_spheres_watertight(
        self, radius: float, center: tuple[float, float, float]
    ) -> None:
        grid = GridSpec(24)
        mesh = marching_cubes(sphere_field(grid, np.asarray(center), radius), grid)
        watertight, open_edges = check_watertight(mesh)
        assert len(mesh.faces) > 0
        assert watertight, f"{open_edges} open edges"


class TestCloseBoundary:
    def test_halfspace_gets_capped(self) -> None:
        grid = GridSpec(16)
        gx, _, _ = sample_grid(grid)
        field = gx - 0.35

        open_mesh = marching_cubes(field, grid)
        assert not check_watertight(open_mesh)[0]

        closed = marching_cubes(field, grid, close_boundary=True)
        watertight, open_edges = check_watertight(closed)
        assert watertight, f"{open_edges} open edges"
        # The enclosed region is the slab x < 0.35 of the unit cube.
        assert signed_volume(closed) == pytest.approx(0.35, abs=1e-9)

    def test_cap_vertices_sit_on_grid_bounds(self) -> None:
        grid = GridSpec(16)
        gx, _, _ = sample_grid(grid)
        closed = marching_cubes(gx - 0.35, grid, close_boundary=True)
        lo, hi = closed.bounds()
        np.testing.assert_allclose(lo, [0.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(hi, [0.35, 1.0, 1.0], atol=1e-9)

    def test_interior_surface_unchanged(self) -> None:
        grid = GridSpec(24)
        field = sphere_field(grid, np.array([0.5, 0.5, 0.5]), 0.3)
        plain = marching_cubes(field, grid)
        closed = marching_cubes(field, grid, close_boundary=True)
        np.testing.assert_array_equal(plain.vertices, closed.vertices)
        np.testing.assert_array_equal(plain.faces, closed.faces)

    def test_half_ball_capped_volume(self) -> None:
        grid = GridSpec(48)
        field = sphere_field(grid, np.array([0.5, 0.5, 0.0]), 0.3)
        closed = marching_cubes(field, grid, close_boundary=True)
        assert check_watertight(closed)[0]
        half_ball = 0.5 * (4.0 / 3.0) * np.pi * 0.3**3
        assert signed_volume(closed) == pytest.approx(half_ball, rel=5e-3)

    def test_uniform_sign_still_empty(self) -> None:
        grid = GridSpec(8)
        for value in (1.0, -1.0):
            mesh = marching_cubes(
                np.full((8, 8, 8), value), grid, close_boundary=True
            )
            assert mesh.is_empty


class TestEvaluateField:
    def test_matches_direct_forward(self, sphere_world) -> None:
        from pasdf.encoding import positional_encode

        grid = GridSpec(8, (0.3, 0.3, 0.3), (0.7, 0.7, 0.7))
        field = evaluate_field(
            sphere_world.model, sphere_world.encoding, grid, chunk_size=100
        )
        positions = grid.vertex_positions()
        direct = sphere_world.model.forward(
            positional_encode(positions, sphere_world.encoding)
        )
        # Chunking may change BLAS kernel choice, nothing more.
        np.testing.assert_allclose(field.ravel(), direct, rtol=1e-12, atol=1e-15)

    def test_extracts_learned_sphere(self, sphere_world) -> None:
        grid = GridSpec(32, (0.1, 0.1, 0.1), (0.9, 0.9, 0.9))
        field = evaluate_field(sphere_world.model, sphere_world.encoding, grid)
        mesh = marching_cubes(field, grid)
        assert len(mesh.faces) > 0
        watertight, open_edges = check_watertight(mesh)
        assert watertight, f"{open_edges} open edges"
        center = sphere_world.record.normalize(sphere_world.center[None])[0]
        radial = np.linalg.norm(mesh.vertices - center, axis=1)
        # The quickly fit fixture wobbles; the level set still has to be
        # a closed surface hugging the training sphere.
        assert np.abs(radial - 0.3).mean() < 0.03
        assert np.abs(radial - 0.3).max() < 0.08
        exact = 4.0 / 3.0 * np.pi * 0.3**3
        assert signed_volume(mesh) == pytest.approx(exact, rel=0.2)

    def test_rejects_bad_chunk_size(self, sphere_world) -> None:
        grid = GridSpec(8)
        with pytest.raises(InvalidParameterError):
            evaluate_field(sphere_world.model, sphere_world.encoding, grid, chunk_size=0)
