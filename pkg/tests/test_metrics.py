import json
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from taskgrasp.geometry import RigidPose, nearest_distances, points_in_mesh, sample_surface
from taskgrasp.hand import HandParams, forward_hand
from taskgrasp.metrics import (
    REPORT_COLUMNS,
    GraspEvaluation,
    MetricError,
    Thresholds,
    aggregate,
    contact_ratio,
    diversity_score,
    evaluate_record,
    is_contacted,
    obstacle_penetration,
    penetration_volume,
    qualified_ratio,
    report_csv,
    report_json,
    simulation_displacement,
    task_score,
)
from taskgrasp.physics import Body, SupportPolygon, mass_properties, simulate
from taskgrasp.primitives import box, hollow_box
from taskgrasp.scenegen import ObjectAsset, Placement, SceneConfig, TaskConfig, TaskKind, resting_pose

BLOCK = ObjectAsset("block", box([0.04, 0.04, 0.04]), 0.1, "everyday-object")
SMALL = ObjectAsset("small", box([0.01, 0.01, 0.01]), 0.01, "brick")
POST = ObjectAsset("post", box([0.01, 0.01, 0.05]), 0.04, "everyday-object")


def ev(pv=0.0, sd=0.0, contacted=True, init=0.0, goal=0.0, th=Thresholds()):
    return GraspEvaluation(pv, sd, contacted, init, goal, pv <= th.pv and sd <= th.sd)


# ---------------------------------------------------------------- physics


def test_mass_properties_box():
    vol, com, inertia = mass_properties(box([0.1, 0.2, 0.3], center=[1, 2, 3]))
    assert vol == pytest.approx(0.006, rel=1e-12)
    np.testing.assert_allclose(com, [1, 2, 3], atol=1e-12)
    expected = vol / 12 * np.diag([0.2**2 + 0.3**2, 0.1**2 + 0.3**2, 0.1**2 + 0.2**2])
    np.testing.assert_allclose(inertia, expected, atol=1e-15)


def test_resting_box_stays_put():
    body = Body(BLOCK.mesh, BLOCK.mass)
    pose = resting_pose(BLOCK, (0.0, 0.0), 0.3, 0.0)
    res = simulate(body, pose, 1.0, supports=[SupportPolygon.rect(0.0, -1, 1, -1, 1)])
    assert res.displacement < 1e-4
    assert res.max_support_penetration <= 1e-4


def test_free_fall():
    sd = simulation_displacement(None, BLOCK, duration=1.0)
    assert sd == pytest.approx(0.5 * 9.81 * 100, rel=0.01)


def test_zero_duration():
    assert simulation_displacement(None, BLOCK, duration=0.0) == 0.0
    with pytest.raises(MetricError):
        simulation_displacement(None, BLOCK, duration=-1.0)


def test_cage_confines_object():
    # 0.75 mm clearance on every side
    cage = hollow_box([0.06, 0.06, 0.06], [0.0415, 0.0415, 0.0415])
    assert cage.watertight
    sd = simulation_displacement(cage, BLOCK, duration=1.0)
    assert sd < 0.2


# ---------------------------------------------------------------- ratios and scores


def test_contact_ratio_constructed():
    obj = SMALL.mesh
    surface = sample_surface(obj, 20000, seed=0).points
    gaps = [0.002, 0.003, 0.004, 0.008]
    hands = [box([0.01] * 3, center=[0.01 + g, 0, 0]) for g in gaps]
    flags = [is_contacted(h, obj) for h in hands]
    # oracle: minimum vertex-to-surface distance from dense samples
    oracle = [nearest_distances(h.vertices, surface).min() < 5e-3 for h in hands]
    assert flags == oracle == [True, True, True, False]
    assert contact_ratio([ev(contacted=f) for f in flags]) == 75.0
    assert contact_ratio([ev(contacted=True)] * 3) == 100.0
    assert contact_ratio([ev(contacted=False)] * 3) == 0.0
    with pytest.raises(MetricError):
        contact_ratio([])


def test_qualified_ratio():
    assert qualified_ratio([ev()] * 4) == 100.0
    batch = [ev(2.9, 1.0), ev(3.0, 2.0), ev(3.1, 0.0), ev(0.0, 2.01), ev(1.0, 1.99)]
    assert qualified_ratio(batch, 3.0, 2.0) == pytest.approx(100.0 * 3 / 5)
    assert qualified_ratio([ev(5.0, 0.0), ev(0.0, 5.0)]) == 0.0
    with pytest.raises(MetricError):
        qualified_ratio([])


def test_diversity():
    g = HandParams()
    assert diversity_score([g, g, g]) == 0.0
    theta = np.zeros(51)
    theta[4] = 1.0
    assert diversity_score([g, HandParams(np.zeros(10), theta)]) == 1.0
    with pytest.raises(MetricError):
        diversity_score([g])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_diversity_brute_force_and_permutation(seed):
    g = np.random.default_rng(seed)
    thetas = g.normal(size=(5, 51))
    grasps = [HandParams(np.zeros(10), t) for t in thetas]
    pairs = [np.sqrt(np.sum((a - b) ** 2)) for a, b in combinations(thetas, 2)]
    assert diversity_score(grasps) == pytest.approx(np.mean(pairs), abs=1e-12)
    perm = g.permutation(5)
    assert diversity_score([grasps[i] for i in perm]) == pytest.approx(diversity_score(grasps), abs=1e-12)


def test_task_score_examples():
    assert round(task_score(0.6461, 0.0682, 0.0635), 4) == 0.5638
    assert round(task_score(0.8454, 0.1476, 0.0455), 4) == 0.6878
    assert task_score(1.0, 0.0, 0.0) == 1.0
    with pytest.raises(MetricError):
        task_score(1.2, 0.0, 0.0)


# ---------------------------------------------------------------- obstacle penetration


def test_opp_half_inside(hand_model):
    verts = forward_hand(hand_model, HandParams()).vertices
    u = np.array([0.3, 0.8, -0.52])
    u /= np.linalg.norm(u)
    proj = np.sort(verts @ u)
    cut = 0.5 * (proj[388] + proj[389])
    assert proj[389] - proj[388] > 1e-6
    # 1 m box whose +z face is the plane u.x = cut, covering the side u.x < cut
    rot = Rotation.align_vectors([u], [[0, 0, 1]])[0].as_matrix()
    wall = box([1, 1, 1]).transformed(RigidPose.from_matrix(rot, u * (cut - 0.5)))
    assert points_in_mesh(wall, verts).sum() == 389
    assert obstacle_penetration(forward_hand(hand_model, HandParams()), [wall]) == pytest.approx(0.5, abs=1 / 778)
    assert obstacle_penetration(forward_hand(hand_model, HandParams()), [wall]) == 389 / 778


def test_opp_extremes_and_monotone(hand_model):
    hand = forward_hand(hand_model, HandParams())
    far = box([0.1] * 3, center=[1, 1, 1])
    assert obstacle_penetration(hand, [far]) == 0.0
    assert obstacle_penetration(hand, [box([1, 1, 1])]) == 1.0
    slab = box([1, 1, 0.01])
    base = obstacle_penetration(hand, [slab])
    assert obstacle_penetration(hand, [slab, far]) >= base
    assert obstacle_penetration(hand, [slab, box([1, 0.05, 1])]) >= base


# ---------------------------------------------------------------- record evaluation


def _palm_grasp(top=0.005):
    # palm face (z = -0.014 at rest) pushed 5 mm into an object top at height ``top``
    theta = np.zeros(51)
    theta[48:] = [0.0, -0.045, top - 0.005 + 0.014]
    return HandParams(np.zeros(10), theta)


def _config(catalog, asset):
    table = Placement("table", RigidPose.identity())
    init = SceneConfig(table, (), Placement(asset.id, resting_pose(asset, (0.0, 0.0), 0.0, 0.0)))
    goal = SceneConfig(table, (), Placement(asset.id, resting_pose(asset, (0.1, 0.1), 1.0, 0.0)))
    return TaskConfig(TaskKind.PLACING, init, goal, goal.target.pose.compose(init.target.pose.inverse()), 0)


def test_constructed_overlap(hand_model):
    hand = forward_hand(hand_model, _palm_grasp())
    assert penetration_volume(hand, SMALL.mesh) == pytest.approx(0.5, rel=0.02)


def test_evaluate_record(catalog, hand_model):
    cat = dict(catalog, post=POST)
    cfg = _config(cat, POST)
    grasp = _palm_grasp(top=0.025)
    res = evaluate_record(None, cfg, cat, hand_model, params=grasp)
    assert res.pv == pytest.approx(0.5, rel=0.02)
    assert res.contacted
    # hand lifted above the table in both scenes
    assert res.init_opp == 0.0 and res.goal_opp == 0.0
    assert res.qualified == (res.pv <= 3.0 and res.sd <= 2.0)
    again = evaluate_record(None, cfg, cat, hand_model, params=grasp)
    assert again == res


# ---------------------------------------------------------------- report


def test_aggregate_and_report():
    evals = [ev(1.0, 0.5, True, 0.1, 0.0), ev(4.0, 0.5, True, 0.0, 0.2), ev(0.5, 3.0, False, 0.0, 0.0)]
    grasps = [[HandParams(), HandParams(np.zeros(10), np.ones(51))]]
    row = aggregate("placing", "ours", evals, grasps)
    assert row.qr == pytest.approx(100 / 3)
    assert row.cr == pytest.approx(200 / 3)
    assert row.ds == pytest.approx(np.sqrt(51))
    assert row.ts == pytest.approx(row.recomputed_ts(), abs=1e-6)
    csv_text = report_csv([row])
    assert csv_text.splitlines()[0].split(",") == REPORT_COLUMNS
    assert csv_text == report_csv([row])
    payload = json.loads(report_json([row], {"k": 1}))
    assert payload["rows"][0]["method"] == "ours"
