import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from taskgrasp.geometry import (
    GeometryError,
    PointCloud,
    RigidPose,
    TriMesh,
    farthest_point_sample,
    meshes_collide,
    nearest_distances,
    overlap_volume,
    point_in_mesh,
    points_in_mesh,
    sample_surface,
)
from taskgrasp.primitives import box, icosphere

CM = 0.01


def unit_square():
    return TriMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])


def brute_nearest(q, r):
    return np.sqrt(((q[:, None, :] - r[None, :, :]) ** 2).sum(-1)).min(axis=1)


def greedy_fps(pts, first, k):
    chosen = [first]
    while len(chosen) < k:
        best, best_d = None, -1.0
        for i in range(len(pts)):
            d = min(np.sum((pts[i] - pts[j]) ** 2) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


# ---------------------------------------------------------------- sample_surface


def test_sample_surface_planar():
    pts = sample_surface(unit_square(), 1000, seed=7).points
    assert pts.shape == (1000, 3)
    assert np.all(pts[:, 2] == 0)
    assert np.all((pts[:, :2] >= 0) & (pts[:, :2] <= 1))


def test_sample_surface_deterministic():
    a = sample_surface(unit_square(), 1000, seed=7).points
    b = sample_surface(unit_square(), 1000, seed=7).points
    assert a.tobytes() == b.tobytes()


def test_sample_surface_area_weights():
    cube = box([1, 1, 1], center=[0.5, 0.5, 0.5])
    pts = sample_surface(cube, 60000, seed=3).points
    # classify each point by which face plane it lies on
    counts = []
    for axis in range(3):
        for val in (0.0, 1.0):
            counts.append(np.sum(np.isclose(pts[:, axis], val, atol=1e-12)))
    frac = np.array(counts) / len(pts)
    np.testing.assert_allclose(frac, 1 / 6, rtol=0.05)


def test_sample_surface_empty_mesh():
    with pytest.raises(GeometryError, match="degenerate mesh"):
        sample_surface(TriMesh(np.zeros((0, 3)), np.zeros((0, 3), int)), 10, seed=0)


# ---------------------------------------------------------------- FPS


def test_fps_square_corners():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], float)
    for seed in range(50):
        idx = farthest_point_sample(pts, 2, seed)
        if idx[0] == 0:
            assert idx[1] == 3
            break
    else:
        pytest.fail("no seed started at the origin")


def test_fps_exhaustion_is_permutation(rng):
    pts = rng.random((30, 3))
    idx = farthest_point_sample(pts, 30, seed=1)
    assert sorted(idx.tolist()) == list(range(30))


def test_fps_matches_greedy_oracle(rng):
    pts = rng.random((100, 3))
    idx = farthest_point_sample(pts, 10, seed=4)
    assert idx.tolist() == greedy_fps(pts, int(idx[0]), 10)


def test_fps_too_many():
    with pytest.raises(GeometryError):
        farthest_point_sample(np.zeros((3, 3)), 4, seed=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 60), st.integers(0, 2**31), st.data())
def test_fps_distinct_and_nonincreasing(n, seed, data):
    pts = np.random.default_rng(seed).random((n, 3))
    k = data.draw(st.integers(1, n))
    idx = farthest_point_sample(pts, k, seed)
    assert len(set(idx.tolist())) == k
    gaps = [brute_nearest(pts[idx[i:i + 1]], pts[idx[:i]])[0] for i in range(1, k)]
    assert all(a >= b - 1e-15 for a, b in zip(gaps, gaps[1:]))


# ---------------------------------------------------------------- nearest_distances


def test_nearest_self_zero(rng):
    p = rng.random((50, 3))
    assert np.all(nearest_distances(p, p) == 0)


def test_nearest_simple():
    d = nearest_distances([[0, 0, 0]], [[3, 4, 0], [1, 0, 0]])
    assert d.tolist() == [1.0]


def test_nearest_matches_brute_force(rng):
    q, r = rng.random((500, 3)), rng.random((500, 3))
    np.testing.assert_array_equal(nearest_distances(q, r), brute_nearest(q, r))


def test_nearest_empty_reference():
    with pytest.raises(GeometryError):
        nearest_distances(np.zeros((2, 3)), np.zeros((0, 3)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_nearest_rigid_invariance(seed):
    g = np.random.default_rng(seed)
    q, r = g.random((40, 3)), g.random((60, 3))
    pose = RigidPose.from_rotvec(Rotation.random(random_state=seed).as_rotvec(), g.normal(size=3))
    np.testing.assert_allclose(nearest_distances(pose.apply(q), pose.apply(r)), nearest_distances(q, r), atol=1e-9)


def test_point_cloud_validation():
    with pytest.raises(GeometryError):
        PointCloud([[0, 0, np.nan]])
    with pytest.raises(GeometryError):
        PointCloud(np.zeros((3, 3)), {"w": [1, 2]})


# ---------------------------------------------------------------- containment


def test_point_in_cube():
    cube = box([1, 1, 1], center=[0.5, 0.5, 0.5])
    assert point_in_mesh(cube, [0.5, 0.5, 0.5])
    assert not point_in_mesh(cube, [2, 0, 0])


def test_point_in_sphere_oracle(rng):
    r = 0.05
    sphere = icosphere(r, subdivisions=3)
    edge = np.max(np.linalg.norm(sphere.triangles[:, 0] - sphere.triangles[:, 1], axis=1))
    pts = rng.uniform(-2 * r, 2 * r, size=(1000, 3))
    norm = np.linalg.norm(pts, axis=1)
    keep = np.abs(norm - r) > edge
    inside = points_in_mesh(sphere, pts[keep])
    np.testing.assert_array_equal(inside, norm[keep] < r)


def test_containment_needs_watertight():
    with pytest.raises(GeometryError, match="containment undefined"):
        point_in_mesh(unit_square(), [0.5, 0.5, 0.0])


def test_surface_points_are_outside():
    cube = box([1, 1, 1], center=[0.5, 0.5, 0.5])
    assert not point_in_mesh(cube, [0.5, 0.5, 1.0])


# ---------------------------------------------------------------- overlap volume


def test_overlap_disjoint():
    a = box([CM] * 3)
    b = box([CM] * 3, center=[10 * CM, 0, 0])
    assert overlap_volume(a, b) == 0.0


def test_overlap_offset_boxes():
    a = box([CM] * 3)
    b = box([CM] * 3, center=[0.5 * CM, 0, 0])
    assert overlap_volume(a, b) == pytest.approx(0.5, rel=0.02)


def test_overlap_identical():
    a = box([CM] * 3, center=[0.0003, 0.0002, 0.0001])
    assert overlap_volume(a, a) == pytest.approx(1.0, rel=0.02)


def test_overlap_symmetric_and_converges():
    a = box([CM] * 3)
    b = box([CM] * 3, center=[0.5 * CM, 0, 0])
    coarse = overlap_volume(a, b, 1e-3)
    assert coarse == overlap_volume(b, a, 1e-3)
    fine = overlap_volume(a, b, 5e-4)
    assert abs(fine - coarse) / fine < 0.01


def test_overlap_misaligned_approaches_analytic():
    a = box([CM] * 3, center=[0.0001, 0.0003, 0.0])
    b = box([CM] * 3, center=[0.5 * CM, 0.0002, 0.0004])
    exact = 0.49 * 0.99 * 0.96
    assert overlap_volume(a, b, 1e-3) == overlap_volume(b, a, 1e-3)
    assert overlap_volume(a, b, 2.5e-4) == pytest.approx(exact, rel=0.03)


def test_overlap_requires_watertight():
    with pytest.raises(GeometryError):
        overlap_volume(unit_square(), box([1, 1, 1]))


# ---------------------------------------------------------------- collision


def test_collide_separated():
    cube = box([CM] * 3)
    assert not meshes_collide(cube, RigidPose.identity(), cube, RigidPose.from_rotvec([0, 0, 0], [0.1, 0, 0]))


def test_collide_overlap():
    cube = box([CM] * 3)
    assert meshes_collide(cube, RigidPose.identity(), cube, RigidPose.from_rotvec([0, 0, 0.3], [0.005, 0, 0]))


def test_collide_containment_agrees_with_point_in_mesh():
    big, small = box([0.1] * 3), box([0.01] * 3)
    assert point_in_mesh(big, small.vertices[0])
    assert meshes_collide(small, None, big, None)
    assert meshes_collide(big, None, small, None)


def test_rigid_pose_roundtrip():
    pose = RigidPose.from_rotvec([0.1, -0.2, 0.3], [1, 2, 3])
    back = RigidPose.from_dict(pose.to_dict())
    np.testing.assert_array_equal(back.matrix, pose.matrix)
    ident = pose.compose(pose.inverse())
    np.testing.assert_allclose(ident.matrix, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(ident.translation, 0.0, atol=1e-12)
