"""Lobe surfaces, triangulation, thickness fields and STL solids."""
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from conftest import atl_mesh
from lobeforge.errors import (
    InvalidContour,
    InvalidCurvature,
    MissingTags,
    ProjectionMiss,
    QualityFailure,
    SelfIntersection,
)
from lobeforge.geometry import (
    EllipsoidSpec,
    LobeContour,
    SGPatchSpec,
    SurfacePatch,
    ThicknessField,
    TriMesh,
    arc_height,
    assign_thickness,
    default_atl_contour,
    default_ellipsoid,
    euler_characteristic,
    export_stl,
    flat_patch,
    generate_atl_surface,
    generate_sg_surface,
    graph_distance,
    is_watertight,
    project_to_ellipsoid,
    read_stl,
    solid_volume,
    solidify,
    triangle_angles,
    triangle_areas,
    triangulate,
    unique_edges,
    weld,
)
from lobeforge.shell import dihedral_angles, _hinge_topology


def _square_contour(half=5.0):
    pts = np.array([[-half, -half], [half, -half], [half, half], [-half, half]])
    return LobeContour(pts, free_edge=(2, 3), apex=(0.0, 0.0))


class TestContourAndEllipsoid:
    def test_ellipsoid_rejects_nonpositive_axes(self):
        with pytest.raises(ValueError):
            EllipsoidSpec(30, 0, 15)

    def test_ellipsoid_rejects_non_unit_direction(self):
        with pytest.raises(ValueError):
            EllipsoidSpec(30, 25, 15, direction=(0, 0, 2))

    def test_contour_must_be_simple(self):
        bow = np.array([[0, 0], [2, 2], [2, 0], [0, 2]], dtype=float)
        with pytest.raises(InvalidContour):
            LobeContour(bow, free_edge=(2, 3), apex=(1.0, 1.0))

    def test_apex_must_be_inside(self):
        pts = np.array([[0, 0], [2, 0], [2, 2], [0, 2]], dtype=float)
        with pytest.raises(InvalidContour):
            LobeContour(pts, free_edge=(2, 3), apex=(5.0, 5.0))

    def test_default_contour_dimensions(self):
        c = default_atl_contour()
        assert np.ptp(c.points[:, 0]) == pytest.approx(40.0)
        assert np.ptp(c.points[:, 1]) == pytest.approx(25.0)
        assert np.allclose(c.hinge[:, 1], -12.5)


class TestAtlSurface:
    def test_sphere_apex(self):
        R = 20.0
        patch = generate_atl_surface(_square_contour(), EllipsoidSpec(R, R, R))
        assert np.allclose(patch.apex, [0.0, 0.0, R], atol=1e-9)

    def test_flat_limit(self):
        big = 1e6
        patch = generate_atl_surface(default_atl_contour(), EllipsoidSpec(big, big, big))
        u, v = np.meshgrid(np.linspace(0, 1, 21), np.linspace(0, 1, 21))
        z = patch(u, v)[..., 2]
        assert np.max(np.abs(z - big)) < 1e-3

    def test_projection_matches_implicit_root(self):
        e = EllipsoidSpec(30.0, 25.0, 15.0)
        x0, y0 = 10.0, 5.0
        z = project_to_ellipsoid(np.array([[x0, y0, 0.0]]), e)[0, 2]
        f = lambda s: (x0 / 30.0) ** 2 + (y0 / 25.0) ** 2 + (s / 15.0) ** 2 - 1.0
        assert z == pytest.approx(brentq(f, 0.0, 15.0), abs=1e-10)
        assert z == pytest.approx(15.0 * math.sqrt(1 - (x0 / 30) ** 2 - (y0 / 25) ** 2), abs=1e-10)

    def test_projection_is_idempotent(self, rng):
        e = default_ellipsoid()
        pts = np.column_stack([rng.uniform(-15, 15, 50), rng.uniform(-10, 10, 50), np.zeros(50)])
        once = project_to_ellipsoid(pts, e)
        assert np.max(np.abs(project_to_ellipsoid(once, e) - once)) < 1e-9

    def test_projection_miss(self):
        pts = np.array([[-40.0, 0], [40.0, 0], [40.0, 10], [-40.0, 10]])
        contour = LobeContour(pts, free_edge=(2, 3), apex=(0.0, 5.0))
        with pytest.raises(ProjectionMiss):
            generate_atl_surface(contour, default_ellipsoid())

    def test_boundary_points_lie_on_contour_projection(self):
        contour = default_atl_contour()
        patch = generate_atl_surface(contour, default_ellipsoid())
        hinge = patch(np.linspace(0, 1, 11), np.zeros(11))
        assert np.allclose(hinge[:, 1], -12.5, atol=1e-9)


class TestSgSurface:
    def test_mixed_signs_rejected(self):
        with pytest.raises(InvalidCurvature):
            SGPatchSpec(40, 25, 0.02, -0.02)

    def test_flat_limit_has_straight_dihedrals(self):
        mesh = triangulate(generate_sg_surface(SGPatchSpec(40, 25, 0.0, 0.0)), 5.0)
        hinges, _ = _hinge_topology(mesh.triangles)
        assert np.allclose(dihedral_angles(mesh.vertices, hinges), np.pi, atol=1e-12)

    def test_mean_curvature_at_centre(self):
        patch = generate_sg_surface(SGPatchSpec(40, 25, 0.02, 0.02))
        # second differences of height in physical coordinates at the crown
        h = 1e-3
        uc, vc = patch.apex_uv
        du, dv = h / 40.0, h / 25.0
        z = lambda u, v: float(patch(u, v)[2])
        zxx = (z(uc + du, vc) - 2 * z(uc, vc) + z(uc - du, vc)) / h**2
        zyy = (z(uc, vc + dv) - 2 * z(uc, vc) + z(uc, vc - dv)) / h**2
        mean = -0.5 * (zxx + zyy)
        assert mean == pytest.approx(0.02, rel=0.05)

    def test_sagitta_of_longitudinal_arc(self):
        k, L = 0.02, 40.0
        patch = generate_sg_surface(SGPatchSpec(L, 25, k, 0.01))
        vc = patch.apex_uv[1]
        rise = float(patch(0.5, vc)[2] - patch(0.0, vc)[2])
        R = 1 / k
        assert rise == pytest.approx(R - math.sqrt(R * R - (L / 2) ** 2), rel=1e-9)

    def test_arc_height_is_circular(self):
        x = np.linspace(-10, 10, 7)
        k = 0.05
        z = arc_height(x, k)
        assert np.allclose((z + 1 / k) ** 2 + x**2, 1 / k**2)

    def test_synclastic_and_restraint_region(self):
        patch = generate_sg_surface(SGPatchSpec(36, 25, 1 / 60, 1 / 42, restraint=3.0))
        mesh = triangulate(patch, 2.0)
        assert "restraint" in mesh.tags and mesh.tags["restraint"].any()
        band = mesh.vertices[mesh.tags["restraint"]]
        assert np.all(band[:, 1] <= 1e-9)


class TestTriangulate:
    def test_flat_square(self, flat_square):
        m = flat_square
        assert 4 <= len(m.triangles) <= 16
        assert np.degrees(triangle_angles(m.vertices, m.triangles)).min() > 10.0
        assert euler_characteristic(m) == 1

    def test_target_edge_must_be_positive(self):
        with pytest.raises(ValueError):
            triangulate(flat_patch(1, 1), 0.0)

    def test_atl_is_a_disk_with_bounded_edges(self):
        patch = generate_atl_surface(default_atl_contour(), default_ellipsoid())
        m = triangulate(patch, 1.0)
        assert euler_characteristic(m) == 1
        edges, _ = unique_edges(m.triangles)
        assert np.linalg.norm(m.vertices[edges[:, 0]] - m.vertices[edges[:, 1]], axis=1).max() <= 1.5
        assert np.degrees(triangle_angles(m.vertices, m.triangles)).min() > 10.0

    def test_tags_and_apex(self, small_atl):
        for name in ("hinge", "free-edge", "lateral", "rib"):
            assert small_atl.tagged(name).size > 0
        patch = generate_atl_surface(default_atl_contour(), default_ellipsoid())
        d = np.linalg.norm(small_atl.vertices - patch.apex, axis=1)
        assert small_atl.apex == int(np.argmin(d))

    def test_refinement_scaling(self):
        patch = generate_atl_surface(default_atl_contour(), default_ellipsoid())
        n1 = len(triangulate(patch, 2.0).triangles)
        n2 = len(triangulate(patch, 1.0).triangles)
        assert 3.0 <= n2 / n1 <= 5.0

    def test_area_converges_under_refinement(self):
        patch = generate_atl_surface(default_atl_contour(), default_ellipsoid())
        a = [triangle_areas(m.vertices, m.triangles).sum() for m in (triangulate(patch, h) for h in (1.0, 0.5))]
        assert abs(a[1] - a[0]) / a[1] < 5e-3

    def test_quality_failure_on_degenerate_patch(self):
        # the free edge collapses to a point, so slivers survive any refinement
        def wedge(u, v):
            return np.stack(np.broadcast_arrays(10.0 * u * (1.0 - v) ** 3, 10.0 * v, 0.0 * u), axis=-1)

        with pytest.raises(QualityFailure):
            triangulate(SurfacePatch(wedge, (0.5, 0.5)), 2.0)


class TestThickness:
    def test_constant(self, small_atl):
        assert np.all(small_atl.thickness[~small_atl.tags["rib"]] == 0.93)
        assert np.all(small_atl.thickness[small_atl.tags["rib"]] == pytest.approx(1.86))

    def test_taper_endpoints(self):
        m = atl_mesh(3.0)
        t = assign_thickness(m, ThicknessField.taper(0.90, 1.30)).thickness
        assert t[m.apex] == pytest.approx(0.90)
        hinge = m.tagged("hinge")
        assert np.allclose(t[hinge], 1.30)

    def test_degenerate_taper_equals_constant(self, small_atl):
        a = assign_thickness(small_atl, ThicknessField.taper(0.93, 0.93)).thickness
        b = assign_thickness(small_atl, ThicknessField.constant(0.93)).thickness
        assert np.array_equal(a, b)

    def test_taper_monotone_from_hinge(self, small_atl):
        m = assign_thickness(small_atl, ThicknessField.taper(0.9, 1.3))
        base = np.where(m.tags["rib"], m.thickness / 2, m.thickness)
        d = graph_distance(m.vertices, m.triangles, m.tagged("hinge"))
        order = np.argsort(d)
        # thickness never grows with distance from the hinge
        assert np.all(np.diff(base[order]) <= 1e-12)

    def test_taper_needs_hinge(self, small_atl):
        stripped = TriMesh(small_atl.vertices, small_atl.triangles, {}, small_atl.apex)
        with pytest.raises(MissingTags):
            assign_thickness(stripped, ThicknessField.taper(0.9, 1.3))

    @pytest.mark.parametrize("args", [("constant", 0.0, 0.0), ("taper", 1.3, 0.9), ("bogus", 1, 1)])
    def test_invalid_fields(self, args):
        with pytest.raises(ValueError):
            ThicknessField(*args)


class TestSolids:
    def test_prism_volume(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
        tris = np.array([[0, 1, 2], [0, 2, 3]])
        mesh = TriMesh(verts, tris, {"hinge": np.array([1, 1, 0, 0], bool)}, 2, thickness=np.ones(4))
        v, f = solidify(mesh)
        assert len(f) == 12
        assert is_watertight(f)
        assert solid_volume(v, f) == pytest.approx(1.0, rel=1e-6)

    def test_round_trip(self, small_atl, tmp_path):
        path = tmp_path / "lobe.stl"
        export_stl(small_atl, path)
        corners, normals = read_stl(path)
        v, f = solidify(small_atl)
        assert len(corners) == len(f)
        wv, wf = weld(corners)
        assert is_watertight(wf)
        assert np.allclose(corners, v[f].astype(np.float32), atol=0)
        assert np.allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-6)

    def test_binary_layout(self, small_atl, tmp_path):
        path = tmp_path / "lobe.stl"
        export_stl(small_atl, path)
        data = path.read_bytes()
        n = int.from_bytes(data[80:84], "little")
        assert len(data) == 84 + 50 * n

    def test_outward_normals(self, small_atl):
        v, f = solidify(small_atl)
        assert solid_volume(v, f) > 0

    def test_self_intersection(self):
        patch = generate_atl_surface(_square_contour(6.0), EllipsoidSpec(10, 10, 10))
        mesh = assign_thickness(triangulate(patch, 1.0), ThicknessField.constant(100.0))
        with pytest.raises(SelfIntersection):
            solidify(mesh)
