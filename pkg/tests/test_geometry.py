import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dt_lidar.errors import FormatError, GeometryError
from dt_lidar.geometry import (Ray, TriangleMesh, box_mesh, build_bvh, cast_rays, intersect,
                               load_obj, plane_mesh, sphere_mesh)

from oracles import brute_force_hit, mesh_triangles


def random_rays(rng, n, spread=20.0):
    origins = rng.uniform(-spread, spread, (n, 3))
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return origins, dirs


def assert_matches_brute_force(meshes, origins, dirs, max_range):
    bvh = build_bvh(meshes)
    tris = mesh_triangles(meshes)
    objects = np.concatenate([[m.object_id] * m.n_triangles for m in meshes])
    t, tri, obj = cast_rays(bvh, origins, dirs, max_range)
    for i in range(len(dirs)):
        t_ref, i_ref = brute_force_hit(tris, origins[i], dirs[i], max_range)
        if i_ref < 0:
            assert tri[i] == -1 and math.isinf(t[i])
        else:
            assert tri[i] == i_ref
            assert abs(t[i] - t_ref) <= 1e-9
            assert obj[i] == objects[i_ref]


def test_single_triangle_one_leaf():
    mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], object_id=7)
    bvh = build_bvh([mesh])
    assert sum(1 for _ in bvh.leaves()) == 1
    hit = intersect(bvh, Ray((0.2, 0.2, 1.0), (0.0, 0.0, -1.0)), 10.0)
    assert hit.object_id == 7
    assert hit.triangle == 0
    assert hit.distance == pytest.approx(1.0)


def test_empty_geometry_rejected():
    with pytest.raises(GeometryError, match="no geometry"):
        build_bvh([])
    with pytest.raises(GeometryError, match="no geometry"):
        build_bvh([TriangleMesh(np.zeros((3, 3)), np.zeros((0, 3)))])


def test_axis_aligned_plane_and_range_clipping():
    bvh = build_bvh([plane_mesh(50.0, z=5.0)])
    ray = Ray((0.0, 0.0, 0.0), (0.0, 0.0, 1.0))
    assert intersect(bvh, ray, 10.0).distance == 5.0
    assert intersect(bvh, ray, 4.0) is None


def test_nearest_of_stacked_planes():
    bvh = build_bvh([plane_mesh(50.0, z=7.0, object_id=2), plane_mesh(50.0, z=3.0, object_id=1)])
    hit = intersect(bvh, Ray((0.1, 0.2, 0.0), (0.0, 0.0, 1.0)), 100.0)
    assert hit.distance == 3.0
    assert hit.object_id == 1


def test_hit_point_consistent_with_distance():
    bvh = build_bvh([box_mesh((5, 1, 0), (2, 2, 2))])
    d = np.array([1.0, 0.2, 0.05])
    d /= np.linalg.norm(d)
    hit = intersect(bvh, Ray((0.0, 0.0, 0.0), tuple(d)), 100.0)
    np.testing.assert_allclose(hit.point, hit.distance * d, atol=1e-6)


def test_hits_at_origin_are_discarded():
    bvh = build_bvh([plane_mesh(10.0, z=0.0)])
    assert intersect(bvh, Ray((0.0, 0.0, 0.0), (0.0, 0.0, 1.0)), 10.0) is None


def test_leaf_boxes_contain_their_triangles():
    rng = np.random.default_rng(3)
    v = rng.uniform(-10, 10, (3000, 3))
    bvh = build_bvh([TriangleMesh(v, np.arange(3000).reshape(-1, 3))])
    for node, slots in bvh.leaves():
        verts = bvh.triangle_vertices(slots).reshape(-1, 3)
        assert np.all(verts >= bvh.node_min[node])
        assert np.all(verts <= bvh.node_max[node])


def test_two_cubes_match_brute_force():
    meshes = [box_mesh((0, 0, 0), (1, 1, 1), object_id=1),
              box_mesh((3, 0.5, 0.2), (1, 1, 1), 0.4, object_id=2)]
    assert sum(m.n_triangles for m in meshes) == 24
    rng = np.random.default_rng(11)
    origins, dirs = random_rays(rng, 1000, spread=4.0)
    assert_matches_brute_force(meshes, origins, dirs, 50.0)


def test_random_soup_matches_brute_force():
    rng = np.random.default_rng(5)
    centers = rng.uniform(-30, 30, (10000, 3))
    v = (centers[:, None, :] + rng.normal(scale=1.0, size=(10000, 3, 3))).reshape(-1, 3)
    meshes = [TriangleMesh(v, np.arange(30000).reshape(-1, 3), object_id=4)]
    origins, dirs = random_rays(rng, 1000)
    assert_matches_brute_force(meshes, origins, dirs, 80.0)


def test_ties_go_to_lowest_triangle_index():
    a = plane_mesh(5.0, z=2.0, object_id=1)
    b = plane_mesh(5.0, z=2.0, object_id=2)
    hit = intersect(build_bvh([b, a]), Ray((0.3, 0.1, 0.0), (0.0, 0.0, 1.0)), 10.0)
    assert hit.object_id == 2
    assert hit.triangle in (0, 1)


def test_shrinking_range_only_turns_hits_into_misses():
    rng = np.random.default_rng(8)
    bvh = build_bvh([box_mesh(rng.uniform(-10, 10, 3), rng.uniform(1, 4, 3), object_id=i)
                     for i in range(40)])
    origins, dirs = random_rays(rng, 1000, spread=12.0)
    t_full, tri_full, _ = cast_rays(bvh, origins, dirs, 60.0)
    for limit in (30.0, 10.0, 3.0):
        t, tri, _ = cast_rays(bvh, origins, dirs, limit)
        inside = t_full <= limit
        np.testing.assert_array_equal(t[inside], t_full[inside])
        np.testing.assert_array_equal(tri[inside], tri_full[inside])
        assert np.all(np.isinf(t[~inside]))


def test_downward_rays_always_hit_ground():
    bvh = build_bvh([plane_mesh(1000.0)])
    rng = np.random.default_rng(1)
    origins = np.column_stack([rng.uniform(-500, 500, (5000, 2)), rng.uniform(0.5, 50, 5000)])
    dirs = np.column_stack([rng.normal(scale=0.3, size=(5000, 2)), -np.ones(5000)])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t, _, _ = cast_rays(bvh, origins, dirs, 1e4)
    assert np.all(np.isfinite(t))


def test_multiple_bvhs_combine_nearest():
    near = build_bvh([plane_mesh(10.0, z=2.0, object_id=1)])
    far = build_bvh([plane_mesh(10.0, z=4.0, object_id=2)])
    t, tri, obj = cast_rays([far, near], np.zeros(3), np.array([[0.0, 0.0, 1.0]]), 10.0)
    assert t[0] == 2.0 and obj[0] == 1 and tri[0] >= 2


def test_enclosing_sphere_catches_every_ray():
    bvh = build_bvh([sphere_mesh(10.0, lon_offset=0.123)])
    rng = np.random.default_rng(2)
    _, dirs = random_rays(rng, 20000)
    t, _, _ = cast_rays(bvh, np.zeros(3), dirs, 50.0)
    assert np.all(np.isfinite(t))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_boxes=st.integers(1, 12))
def test_bvh_equivalence_property(seed, n_boxes):
    rng = np.random.default_rng(seed)
    meshes = [box_mesh(rng.uniform(-5, 5, 3), rng.uniform(0.2, 3, 3), rng.uniform(-3, 3),
                       object_id=i) for i in range(n_boxes)]
    origins, dirs = random_rays(rng, 100, spread=8.0)
    assert_matches_brute_force(meshes, origins, dirs, 30.0)


class TestObj:
    def test_fan_triangulation_and_scale(self, tmp_path):
        p = tmp_path / "quad.obj"
        p.write_text("# quad\nv 0 0 0\nv 100 0 0\nv 100 100 0\nv 0 100 0\nvn 0 0 1\n"
                     "f 1//1 2//1 3//1 4//1\n")
        mesh = load_obj(p, scale=0.01)
        assert mesh.n_triangles == 2
        np.testing.assert_allclose(mesh.vertices.max(axis=0), [1.0, 1.0, 0.0])

    def test_non_finite_vertex_reports_line(self, tmp_path):
        p = tmp_path / "bad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv nan 1 0\nf 1 2 3\n")
        with pytest.raises(FormatError, match=":3:"):
            load_obj(p)

    def test_face_index_out_of_range(self, tmp_path):
        p = tmp_path / "bad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nf 1 2 5\n")
        with pytest.raises(FormatError, match=":3:"):
            load_obj(p)
