"""Grasp evaluation metrics and report aggregation."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .geometry import RigidPose, TriMesh, overlap_volume, points_in_mesh, sample_surface
from .hand import HandMesh, HandModel, HandParams, forward_hand
from .physics import PhysicsParams, SimulationError, simulate
from .sdf import surface_distance

CONTACT_THRESHOLD = 5e-3
HAND_SAMPLES = 3000
REPORT_COLUMNS = [
    "task", "method", "pv_avg", "pv_std", "sd_avg", "sd_std", "cr", "qr", "ds", "init_opp", "goal_opp", "ts",
]


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class Thresholds:
    pv: float = 3.0  # cm^3
    sd: float = 2.0  # cm
    contact: float = CONTACT_THRESHOLD  # m

    def __post_init__(self):
        if not (self.pv > 0 and self.sd > 0 and self.contact > 0):
            raise MetricError("thresholds must be positive")


@dataclass(frozen=True)
class GraspEvaluation:
    pv: float
    sd: float
    contacted: bool
    init_opp: float
    goal_opp: float
    qualified: bool

    def __post_init__(self):
        for name in ("init_opp", "goal_opp"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise MetricError(f"{name} must lie in [0, 1], got {v}")


def _closed(hand) -> TriMesh:
    return hand.closed() if isinstance(hand, HandMesh) else hand


def simulation_displacement(
    hand,
    asset,
    pose: RigidPose | None = None,
    duration: float = 1.0,
    params: PhysicsParams = PhysicsParams(),
    n_samples: int = HAND_SAMPLES,
) -> float:
    """Center-of-mass drift (cm) of ``asset`` at ``pose`` under gravity with the hand held fixed.

    ``hand`` is a :class:`HandMesh`, any watertight :class:`TriMesh`, or None (free fall).
    """
    from .scenegen import _body, asset_sdf

    if duration < 0:
        raise MetricError("duration must be non-negative")
    if duration == 0:
        return 0.0
    pose = pose or RigidPose.identity()
    pts = None
    if hand is not None:
        pts = sample_surface(_closed(hand), n_samples, seed=0).points
    try:
        res = simulate(_body(asset), pose, duration, hand_points=pts, sdf=asset_sdf(asset), params=params,
                       stop_at_rest=True)
    except SimulationError as exc:
        raise MetricError(f"integrator blow-up: {exc}") from exc
    return res.displacement * 100.0


def penetration_volume(hand, object_mesh: TriMesh, voxel_edge: float = 1e-3) -> float:
    return overlap_volume(_closed(hand), object_mesh, voxel_edge)


@lru_cache(maxsize=4096)
def _quality(model: HandModel, asset, key: bytes) -> tuple[float, float]:
    params = HandParams.from_vector(np.frombuffer(key, dtype=np.float64))
    hand = forward_hand(model, params)
    return penetration_volume(hand, asset.mesh), simulation_displacement(hand, asset)


def grasp_quality(model: HandModel, params: HandParams, asset, blowup_sd: float | None = None) -> tuple[float, float]:
    """(PV cm^3, SD cm) of an object-frame grasp, memoized per (model, asset, params).

    If the displacement simulation blows up, ``blowup_sd`` is reported as SD when given;
    otherwise the :class:`MetricError` propagates.
    """
    try:
        return _quality(model, asset, params.vector().tobytes())
    except MetricError:
        if blowup_sd is None:
            raise
        return penetration_volume(forward_hand(model, params), asset.mesh), float(blowup_sd)


def _ratio(flags) -> float:
    flags = list(flags)
    if not flags:
        raise MetricError("empty evaluation list")
    return 100.0 * sum(bool(f) for f in flags) / len(flags)


def contact_ratio(evaluations) -> float:
    return _ratio(e.contacted for e in evaluations)


def qualified_ratio(evaluations, pv_thresh: float = 3.0, sd_thresh: float = 2.0) -> float:
    if not (pv_thresh > 0 and sd_thresh > 0):
        raise MetricError("thresholds must be positive")
    return _ratio(e.pv <= pv_thresh and e.sd <= sd_thresh for e in evaluations)


def diversity_score(grasps) -> float:
    """Mean pairwise L2 distance between 51-dim theta vectors."""
    th = np.array([g.theta if isinstance(g, HandParams) else np.asarray(g, float) for g in grasps])
    if len(th) < 2:
        raise MetricError("diversity needs at least two grasps")
    i, j = np.triu_indices(len(th), k=1)
    return float(np.linalg.norm(th[i] - th[j], axis=1).mean())


def obstacle_penetration(hand, scene, catalog=None) -> float:
    """Fraction of hand vertices inside any obstacle or the support.

    ``scene`` is a SceneConfig (resolved through ``catalog``) or a sequence of world meshes.
    """
    meshes = scene.context_meshes(catalog) if catalog is not None else scene
    verts = hand.vertices
    inside = np.zeros(len(verts), dtype=bool)
    for m in meshes:
        inside |= points_in_mesh(m, verts)
    return float(inside.sum()) / len(verts)


def task_score(qr: float, init_opp: float, goal_opp: float) -> float:
    for name, v in (("qr", qr), ("init_opp", init_opp), ("goal_opp", goal_opp)):
        if not 0.0 <= v <= 1.0:
            raise MetricError(f"{name} must lie in [0, 1], got {v}")
    return qr * (1.0 - init_opp) * (1.0 - goal_opp)


def is_contacted(hand, object_mesh: TriMesh, threshold: float = CONTACT_THRESHOLD) -> bool:
    verts = hand.vertices
    if surface_distance(object_mesh, verts).min() < threshold:
        return True
    return bool(points_in_mesh(object_mesh, verts).any())


def evaluate_record(record, config, catalog, hand_model: HandModel, thresholds: Thresholds = Thresholds(),
                    params: HandParams | None = None, blowup_sd: float | None = None) -> GraspEvaluation:
    """Evaluate an object-frame grasp (``record.params`` unless ``params`` given) in both scenes."""
    from .scenegen import hand_in_scene

    params = params or record.params
    asset = catalog[config.init.target.asset_id]
    pv, sd = grasp_quality(hand_model, params, asset, blowup_sd)
    local = forward_hand(hand_model, params)
    contacted = is_contacted(local, asset.mesh, thresholds.contact)
    init_hand = hand_in_scene(hand_model, params, config.init.target.pose)
    goal_pose = config.transform.compose(config.init.target.pose)
    goal_hand = hand_in_scene(hand_model, params, goal_pose)
    init_opp = obstacle_penetration(init_hand, config.init, catalog)
    goal_opp = obstacle_penetration(goal_hand, config.goal, catalog)
    return GraspEvaluation(
        pv=pv,
        sd=sd,
        contacted=contacted,
        init_opp=init_opp,
        goal_opp=goal_opp,
        qualified=bool(pv <= thresholds.pv and sd <= thresholds.sd),
    )


@dataclass(frozen=True)
class ReportRow:
    task: str
    method: str
    pv_avg: float
    pv_std: float
    sd_avg: float
    sd_std: float
    cr: float  # %
    qr: float  # %
    ds: float
    init_opp: float  # %
    goal_opp: float  # %
    ts: float

    def recomputed_ts(self) -> float:
        return task_score(self.qr / 100.0, self.init_opp / 100.0, self.goal_opp / 100.0)


def aggregate(task: str, method: str, evaluations, grasps_per_config, thresholds: Thresholds = Thresholds()) -> ReportRow:
    """One report row. ``grasps_per_config`` is a list of HandParams lists (one per config) for DS."""
    evaluations = list(evaluations)
    if not evaluations:
        raise MetricError("empty evaluation list")
    pv = np.array([e.pv for e in evaluations])
    sd = np.array([e.sd for e in evaluations])
    qr = qualified_ratio(evaluations, thresholds.pv, thresholds.sd)
    init = 100.0 * float(np.mean([e.init_opp for e in evaluations]))
    goal = 100.0 * float(np.mean([e.goal_opp for e in evaluations]))
    groups = [g for g in grasps_per_config if len(g) >= 2]
    ds = float(np.mean([diversity_score(g) for g in groups])) if groups else 0.0
    return ReportRow(
        task=task,
        method=method,
        pv_avg=float(pv.mean()),
        pv_std=float(pv.std()),
        sd_avg=float(sd.mean()),
        sd_std=float(sd.std()),
        cr=contact_ratio(evaluations),
        qr=qr,
        ds=ds,
        init_opp=init,
        goal_opp=goal,
        ts=task_score(qr / 100.0, init / 100.0, goal / 100.0),
    )


def report_metadata(thresholds: Thresholds = Thresholds()) -> dict:
    return {
        "pv_threshold_cm3": thresholds.pv,
        "sd_threshold_cm": thresholds.sd,
        "contact_threshold_m": thresholds.contact,
        "ds_vector_space": "raw 51-dim theta, mean over configs of mean pairwise L2",
        "opp_meshes": "obstacles and support",
    }


def report_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        d = asdict(r)
        w.writerow([d[c] if isinstance(d[c], str) else repr(float(d[c])) for c in REPORT_COLUMNS])
    return buf.getvalue()


def report_json(rows, metadata: dict) -> str:
    return json.dumps({"rows": [asdict(r) for r in rows], "metadata": metadata}, indent=2, sort_keys=True) + "\n"
