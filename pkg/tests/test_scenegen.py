import numpy as np
import pytest

from taskgrasp.geometry import RigidPose, meshes_collide, nearest_distances, sample_surface
from taskgrasp.hand import HandParams, forward_hand
from taskgrasp.maps import ContactMap
from taskgrasp.physics import SupportPolygon
from taskgrasp.primitives import box, icosphere
from taskgrasp.scenegen import (
    AnnotatedGrasp,
    ObjectAsset,
    Placement,
    SceneConfig,
    SceneError,
    TaskConfig,
    TaskKind,
    expand_dataset,
    filter_grasps,
    generate_config,
    hand_collides,
    hand_in_scene,
    resting_pose,
    sample_prior_grasps,
    settle_object,
)

PLANE = SupportPolygon.rect(0.0, -1, 1, -1, 1)
CUBE = ObjectAsset("cube", box([0.01] * 3), 0.01, "brick")
BALL = ObjectAsset("ball", icosphere(0.03, 3), 0.1, "everyday-object")


def assert_same_config(a: TaskConfig, b: TaskConfig):
    assert a.to_dict() == b.to_dict()


# ---------------------------------------------------------------- settling


def test_settle_cube_flat_on_plane():
    pose = settle_object(CUBE, PLANE, 0.1, seed=3)
    v = pose.apply(CUBE.mesh.vertices)
    assert -1e-4 <= v[:, 2].min() <= 1e-4
    # flat face down: the body z axis stays vertical
    assert abs(pose.matrix[2, 2]) == pytest.approx(1.0, abs=1e-4)
    assert np.sum(np.abs(v[:, 2] - v[:, 2].min()) < 1e-4) == 4


def test_settle_sphere_height():
    pose = settle_object(BALL, PLANE, 0.1, seed=1)
    assert pose.translation[2] == pytest.approx(0.03, abs=1e-3)


def test_settle_deterministic():
    a = settle_object(CUBE, PLANE, 0.1, seed=9)
    b = settle_object(CUBE, PLANE, 0.1, seed=9)
    assert a.to_dict() == b.to_dict()


def test_settle_translation_invariant():
    a = settle_object(CUBE, PLANE, 0.1, seed=5)
    b = settle_object(CUBE, PLANE, 0.1, seed=5, xy=(0.2, -0.1))
    np.testing.assert_allclose(b.translation - a.translation, [0.2, -0.1, 0.0], atol=1e-6)
    np.testing.assert_allclose(b.matrix, a.matrix, atol=1e-6)


def test_settle_rejects_bad_drop():
    with pytest.raises(SceneError):
        settle_object(CUBE, PLANE, 0.0)
    with pytest.raises(SceneError, match="settle failed"):
        settle_object(CUBE, PLANE, 0.1, xy=(5.0, 5.0))


# ---------------------------------------------------------------- configurations


def _target_clear(cfg, catalog):
    for scene in (cfg.init, cfg.goal):
        tgt = scene.world_mesh(scene.target, catalog)
        obstacles = scene.obstacles
        if cfg.kind is TaskKind.STACKING and scene is cfg.goal:
            obstacles = obstacles[1:]  # the base brick is the goal support
        for obs in obstacles:
            assert not meshes_collide(scene.world_mesh(obs, catalog), None, tgt, None)
        low = tgt.vertices[:, 2].min()
        top = max(f.z for f in scene.support_faces(catalog))
        assert low >= top - 1e-4


def test_generate_placing(catalog):
    cfg = generate_config("placing", catalog, 42)
    assert cfg.kind is TaskKind.PLACING
    assert cfg.init.target.asset_id == cfg.goal.target.asset_id
    assert 2 <= len(cfg.init.obstacles) <= 5
    _target_clear(cfg, catalog)
    moved = cfg.transform.compose(cfg.init.target.pose)
    np.testing.assert_allclose(moved.matrix, cfg.goal.target.pose.matrix, atol=1e-12)
    np.testing.assert_allclose(moved.translation, cfg.goal.target.pose.translation, atol=1e-12)


def test_generate_deterministic(catalog):
    assert_same_config(generate_config("shelving", catalog, 7), generate_config("shelving", catalog, 7))


def test_generate_stacking_geometry(catalog):
    cfg = generate_config("stacking", catalog, 3)
    _target_clear(cfg, catalog)
    goal = cfg.goal
    tgt = goal.world_mesh(goal.target, catalog)
    base = goal.world_mesh(goal.obstacles[0], catalog)
    assert abs(tgt.bounds[0, 2] - base.bounds[1, 2]) <= 1e-3


def test_config_json_roundtrip(catalog):
    cfg = generate_config("placing", catalog, 11)
    assert TaskConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_generate_no_assets():
    with pytest.raises(SceneError):
        generate_config("stacking", {"cube": CUBE}, 0)


# ---------------------------------------------------------------- prior grasps


@pytest.fixture(scope="module")
def ball_grasps(hand_model):
    return sample_prior_grasps(BALL, hand_model, 2, seed=0)


def test_prior_grasps_touch_sphere(ball_grasps, hand_model):
    surface = sample_surface(BALL.mesh, 20000, seed=0).points
    for g in ball_grasps:
        tips = forward_hand(hand_model, g).vertices[hand_model.fingertips]
        # distance to the analytic sphere, cross-checked against dense surface samples
        d = np.abs(np.linalg.norm(tips, axis=1) - 0.03)
        assert np.sum(d <= 5e-3) >= 2
        assert np.sum(nearest_distances(tips, surface) <= 5e-3 + 1e-3) >= 2


def test_prior_grasps_deterministic(ball_grasps, hand_model):
    again = sample_prior_grasps(BALL, hand_model, 2, seed=0)
    for a, b in zip(ball_grasps, again):
        np.testing.assert_array_equal(a.theta, b.theta)


def test_prior_grasps_within_limits(ball_grasps):
    for g in ball_grasps:
        assert g.finite
        assert np.all(np.linalg.norm(g.rotations, axis=1) <= np.pi + 1e-12)


def test_prior_grasps_bad_count(hand_model):
    with pytest.raises(SceneError):
        sample_prior_grasps(BALL, hand_model, 0, seed=0)


# ---------------------------------------------------------------- filtering


def test_filter_precomputed_batch():
    g = HandParams()
    pv = [0.5, 4.0, 4.01, 1.0, 3.9, 0.0, 10.0, 2.0, 4.0, 3.0]
    sd = [0.1, 3.0, 1.00, 3.2, 2.9, 0.0, 0.5, 5.0, 3.01, 2.99]
    batch = [AnnotatedGrasp(g, p, s) for p, s in zip(pv, sd)]
    kept = filter_grasps(batch, BALL, 4.0, 3.0)
    expected = [i for i in range(10) if pv[i] <= 4.0 and sd[i] <= 3.0]
    assert [batch.index(k) for k in kept] == expected == [0, 1, 4, 5, 9]


def test_filter_empty_and_validation():
    assert filter_grasps([], BALL) == []
    with pytest.raises(SceneError):
        filter_grasps([], BALL, pv_threshold=0.0)


def test_filter_annotates_with_model(hand_model):
    far = HandParams(np.zeros(10), np.r_[np.zeros(48), [0.5, 0.0, 0.0]])
    kept = filter_grasps([far], BALL, hand_model=hand_model)
    # a hand 50 cm away does not hold the ball, so it falls
    assert kept == []


# ---------------------------------------------------------------- expansion


def _scene_pair(catalog, obstacles_goal=()):
    asset = catalog["obj_05"]
    table = Placement("table", RigidPose.identity())
    init = SceneConfig(table, (), Placement(asset.id, resting_pose(asset, (-0.1, 0.0), 0.0, 0.0)))
    goal = SceneConfig(table, tuple(obstacles_goal), Placement(asset.id, resting_pose(asset, (0.1, 0.05), 0.5, 0.0)))
    transform = goal.target.pose.compose(init.target.pose.inverse())
    return TaskConfig(TaskKind.PLACING, init, goal, transform, 0, "cfg")


def _hover_grasp():
    # hand hanging 12 cm above the object, clear of the table
    theta = np.zeros(51)
    theta[48:] = [0.0, 0.0, 0.12]
    return AnnotatedGrasp(HandParams(np.zeros(10), theta), 0.0, 0.0)


def test_expand_empty_scene_keeps_all(catalog, hand_model):
    cfg = _scene_pair(catalog)
    priors = {"obj_05": [_hover_grasp(), _hover_grasp()]}
    records = expand_dataset(priors, [cfg], catalog, hand_model)
    assert len(records) == 2
    for r in records:
        assert isinstance(r.contact, ContactMap)
        assert len(r.contact) == 2048
        assert r.contact.values.min() >= 0 and r.contact.values.max() <= 1


def test_expand_rejects_goal_obstacle(catalog, hand_model):
    g = _hover_grasp()
    cfg = _scene_pair(catalog)
    hand = hand_in_scene(hand_model, g.params, cfg.goal.target.pose)
    center = hand.vertices.mean(axis=0)
    blocker = Placement("brick_00", RigidPose.from_rotvec([0, 0, 0], center))
    blocked = _scene_pair(catalog, [blocker])
    assert meshes_collide(hand.closed(), None, catalog["brick_00"].mesh.transformed(blocker.pose), None)
    assert hand_collides(hand, blocked.goal, catalog)
    assert expand_dataset({"obj_05": [g]}, [blocked], catalog, hand_model) == []


def test_expand_requires_inputs(catalog, hand_model):
    with pytest.raises(SceneError):
        expand_dataset({}, [], catalog, hand_model)
