import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from conftest import assert_grad_matches
from texdown import scenes
from texdown.bake import (barycentric, bake_geometry_features, build_uv_raster, reproject_vertex_features)
from texdown.exceptions import DegenerateError, ShapeError
from texdown.mesh import compute_normals, make_mesh, normalize, texel_center_uv


def brute_force_inside(p, tri):
    """Strict point-in-triangle via cross-product signs."""
    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    d = [cross(tri[0], tri[1], p), cross(tri[1], tri[2], p), cross(tri[2], tri[0], p)]
    return all(x > 0 for x in d) or all(x < 0 for x in d)


def test_barycentric_examples():
    tri = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 3.0]])
    assert np.allclose(barycentric(tri[0], tri), [1, 0, 0])
    assert np.allclose(barycentric(tri.mean(axis=0), tri), [1 / 3] * 3)
    assert (barycentric([5.0, 5.0], tri) < 0).any()
    with pytest.raises(DegenerateError):
        barycentric([0, 0], [[0, 0], [1, 1], [2, 2]])


def test_half_square_coverage():
    centers = texel_center_uv(4, 4).reshape(-1, 2)
    upper = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    lower = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    covs = []
    for uv in (upper, lower):
        m = make_mesh([[0, 0, 0], [1, 0, 0], [1, 1, 0]], [[0, 1, 2]], uv)
        covs.append(build_uv_raster(m, (4, 4)).coverage)
    oracle = sum(brute_force_inside(c, upper) for c in centers)
    assert oracle == 6 and int(covs[0].sum()) == 6
    # centres on the shared diagonal belong to exactly one of the two halves
    assert not (covs[0] & covs[1]).any() and (covs[0] | covs[1]).all()


@pytest.mark.parametrize("res", [(4, 4), (7, 5), (32, 32)])
def test_full_tiling_covers_everything_once(res):
    r = build_uv_raster(scenes.two_face_square(), res)
    assert r.coverage.all()
    assert len(r.texel) == res[0] * res[1]  # shared diagonal counted once


def test_all_degenerate_uvs_leave_raster_empty():
    m = make_mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], [[0.2, 0.2]] * 3)
    r = build_uv_raster(m, (8, 8))
    assert not r.coverage.any() and r.skipped_faces == 1


def test_random_triangles_match_brute_force(rng):
    h = w = 16
    centers = texel_center_uv(h, w).reshape(-1, 2)
    for _ in range(20):
        uv = rng.uniform(0, 1, size=(3, 2))
        m = make_mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], uv)
        r = build_uv_raster(m, (h, w))
        oracle = np.array([brute_force_inside(c, uv) for c in centers]).reshape(h, w)
        assert np.array_equal(r.coverage, oracle)


def test_raster_barycentric_invariants(rng):
    r = build_uv_raster(scenes.uv_sphere(), (64, 64))
    assert (r.bary >= -1e-6).all()
    assert np.allclose(r.bary.sum(axis=1), 1, atol=1e-5)


def test_planar_bake():
    m = compute_normals(scenes.two_face_square())
    feats = bake_geometry_features(m, build_uv_raster(m, (8, 8)))
    assert np.all(feats[2] == 0)
    assert np.allclose(feats[3:6].reshape(3, -1).T, [0, 0, 1])
    assert np.all(feats[6] == 1)


def test_bake_reproduces_affine_attribute():
    m = compute_normals(scenes.two_face_square())
    feats = bake_geometry_features(m, build_uv_raster(m, (8, 12)))
    uv = texel_center_uv(8, 12)
    # square vertices sit at 2 * uv - 1
    assert np.allclose(feats[0], 2 * uv[..., 0] - 1, atol=1e-12)
    assert np.allclose(feats[1], 2 * uv[..., 1] - 1, atol=1e-12)


def test_uncovered_texels_are_zero():
    m = compute_normals(normalize(scenes.uv_cube()))
    feats = bake_geometry_features(m, build_uv_raster(m, (32, 48)))
    off = feats[6] == 0
    assert off.any()
    assert np.all(feats[:, off] == 0)
    assert feats[:6].min() >= -1 - 1e-12 and feats[:6].max() <= 1 + 1e-12


def test_reproject_constant_and_uv_features():
    m = scenes.uv_cube()
    r = build_uv_raster(m, (24, 36))
    c = torch.full((m.n_vertices, 2), 0.7, dtype=torch.float64)
    out = reproject_vertex_features(c, m, r)
    assert torch.allclose(out[:, torch.as_tensor(r.coverage)], torch.tensor(0.7, dtype=torch.float64))
    assert (out[:, torch.as_tensor(~r.coverage)] == 0).all()


def test_reproject_uv_coordinates_on_square():
    # vertex index == uv index here, so per-vertex UVs are well defined
    m = scenes.two_face_square()
    r = build_uv_raster(m, (10, 6))
    out = reproject_vertex_features(torch.as_tensor(m.uvs), m, r).numpy()
    uv = texel_center_uv(10, 6)
    assert np.allclose(out[0], uv[..., 0], atol=1e-12) and np.allclose(out[1], uv[..., 1], atol=1e-12)


def test_reproject_gradient(rng):
    m = scenes.uv_sphere(5, 6)
    r = build_uv_raster(m, (12, 12))
    f = torch.as_tensor(rng.normal(size=(m.n_vertices, 3)))
    fr = f.clone().requires_grad_(True)
    reproject_vertex_features(fr, m, r).sum().backward()
    acc = np.zeros(m.n_vertices)
    np.add.at(acc, m.faces[r.face].ravel(), (r.bary * r.weight[:, None]).ravel())
    assert np.allclose(fr.grad.numpy(), acc[:, None])
    wts = torch.as_tensor(rng.normal(size=(3, 12, 12)))
    assert_grad_matches(lambda t: (reproject_vertex_features(t, m, r) * wts).sum(), f)


def test_reproject_shape_error():
    m = scenes.two_face_square()
    with pytest.raises(ShapeError):
        reproject_vertex_features(torch.zeros(3, 2), m, build_uv_raster(m, (4, 4)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=8, max_size=8))
def test_barycentric_partition_and_reproduction(vals):
    tri = np.array(vals[:6]).reshape(3, 2)
    area = (tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1]) - (tri[2, 0] - tri[0, 0]) * (tri[1, 1] - tri[0, 1])
    if abs(area) < 1e-3:
        return
    p = np.array(vals[6:])
    b = barycentric(p, tri)
    assert abs(b.sum() - 1) < 1e-9
    assert np.allclose(b @ tri, p, atol=1e-8)
