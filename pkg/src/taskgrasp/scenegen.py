"""Task configurations (Placing / Stacking / Shelving), prior grasps and dataset expansion."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial.transform import Rotation

from . import primitives
from .geometry import (
    GeometryError,
    RigidPose,
    TriMesh,
    farthest_point_sample,
    meshes_collide,
    sample_surface,
)
from .hand import FINGER_CHAINS, HandModel, HandParams, compose_rigid, forward_hand, forward_vertices, palm_frame
from .maps import CONTACT_ALPHA, CONTACT_SATURATION, ContactMap, compute_contact_map
from .physics import Body, PhysicsParams, SimulationError, SupportPolygon, simulate
from .sdf import SDFGrid, build_sdf, surface_distance

log = logging.getLogger(__name__)

MAX_EXTENT = 0.5
N_OBJECT_POINTS = 2048
N_SCENE_POINTS = 6000


class SceneError(RuntimeError):
    pass


class TaskKind(str, enum.Enum):
    PLACING = "placing"
    STACKING = "stacking"
    SHELVING = "shelving"


CATEGORIES = ("everyday-object", "brick", "shelf", "table")


@dataclass(frozen=True, eq=False)
class ObjectAsset:
    id: str
    mesh: TriMesh
    mass: float
    category: str
    # resting faces of support assets, in the asset frame
    support_faces: tuple = ()
    # free height above the support faces (shelf interiors), in the asset frame
    clearance: float = math.inf

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise SceneError(f"unknown asset category {self.category!r}")
        if not self.mesh.watertight:
            raise SceneError(f"asset {self.id}: mesh is not watertight")
        ext = self.mesh.bounds[1] - self.mesh.bounds[0]
        if ext.max() > MAX_EXTENT + 1e-9:
            raise SceneError(f"asset {self.id}: extent {ext.max():.3f} m exceeds {MAX_EXTENT} m")
        if not self.mass > 0:
            raise SceneError(f"asset {self.id}: mass must be positive")

    @property
    def radius(self) -> float:
        c = 0.5 * (self.mesh.bounds[0] + self.mesh.bounds[1])
        return float(np.linalg.norm(self.mesh.vertices - c, axis=1).max())

    @property
    def bottom(self) -> float:
        return float(self.mesh.bounds[0, 2])


Catalog = dict  # asset id -> ObjectAsset


def _everyday(i, mesh, mass):
    return ObjectAsset(f"obj_{i:02d}", mesh, mass, "everyday-object")


def default_catalog() -> Catalog:
    """Procedural stand-ins for the everyday objects, bricks, table and shelf."""
    objs = [
        _everyday(0, primitives.cylinder(0.035, 0.10, 24), 0.25),
        _everyday(1, primitives.box([0.07, 0.05, 0.10]), 0.20),
        _everyday(2, primitives.icosphere(0.04, 3), 0.15),
        _everyday(3, primitives.cylinder(0.03, 0.16, 24), 0.30),
        _everyday(4, primitives.triangular_prism(0.07, 0.08), 0.15),
        _everyday(5, primitives.box([0.06, 0.06, 0.06]), 0.20),
        _everyday(6, primitives.box([0.12, 0.08, 0.035]), 0.25),
        _everyday(7, primitives.cylinder(0.045, 0.07, 24), 0.25),
    ]
    bricks = [
        ObjectAsset("brick_00", primitives.box([0.05, 0.05, 0.05]), 0.08, "brick"),
        ObjectAsset("brick_01", primitives.box([0.06, 0.04, 0.04]), 0.08, "brick"),
        ObjectAsset("brick_02", primitives.cylinder(0.025, 0.05, 20), 0.07, "brick"),
        ObjectAsset("brick_03", primitives.triangular_prism(0.05, 0.05), 0.05, "brick"),
        ObjectAsset("brick_04", primitives.box([0.07, 0.05, 0.03]), 0.08, "brick"),
        ObjectAsset("brick_05", primitives.cylinder(0.03, 0.04, 20), 0.08, "brick"),
    ]
    table = ObjectAsset(
        "table",
        primitives.box([0.5, 0.5, 0.03], center=(0.0, 0.0, -0.015)),
        20.0,
        "table",
        support_faces=(SupportPolygon.rect(0.0, -0.25, 0.25, -0.25, 0.25),),
    )
    board = 0.02
    shelf = ObjectAsset(
        "shelf",
        primitives.merge(
            [
                primitives.box([0.5, 0.3, board], center=(0.0, 0.0, -board / 2)),
                primitives.box([0.5, 0.3, board], center=(0.0, 0.0, 0.30 + board / 2)),
                primitives.box([board, 0.3, 0.30], center=(-0.25 + board / 2, 0.0, 0.15)),
                primitives.box([board, 0.3, 0.30], center=(0.25 - board / 2, 0.0, 0.15)),
                primitives.box([0.46, board, 0.30], center=(0.0, 0.15 - board / 2, 0.15)),
            ]
        ),
        15.0,
        "shelf",
        support_faces=(SupportPolygon.rect(0.0, -0.23, 0.23, -0.15, 0.13),),
        clearance=0.30,
    )
    return {a.id: a for a in objs + bricks + [table, shelf]}


@lru_cache(maxsize=64)
def _body(asset: ObjectAsset) -> Body:
    return Body(asset.mesh, asset.mass)


@lru_cache(maxsize=64)
def asset_sdf(asset: ObjectAsset) -> SDFGrid:
    return build_sdf(asset.mesh)


@lru_cache(maxsize=64)
def object_cloud(asset: ObjectAsset, n: int = N_OBJECT_POINTS, seed: int = 0) -> np.ndarray:
    """Fixed per-asset surface samples in the asset frame (maps are aligned to these)."""
    return sample_surface(asset.mesh, n, seed).points


# ------------------------------------------------------------------ scenes


@dataclass(frozen=True)
class Placement:
    asset_id: str
    pose: RigidPose

    def to_dict(self) -> dict:
        return {"asset": self.asset_id, "pose": self.pose.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "Placement":
        return cls(d["asset"], RigidPose.from_dict(d["pose"]))


@dataclass(frozen=True)
class SceneConfig:
    support: Placement
    obstacles: tuple
    target: Placement

    def world_mesh(self, placement: Placement, catalog: Catalog) -> TriMesh:
        return catalog[placement.asset_id].mesh.transformed(placement.pose)

    def context_meshes(self, catalog: Catalog) -> list[TriMesh]:
        """Support and obstacles in world coordinates (everything except the target)."""
        return [self.world_mesh(p, catalog) for p in (self.support, *self.obstacles)]

    def support_faces(self, catalog: Catalog) -> list[SupportPolygon]:
        return _place_faces(catalog[self.support.asset_id].support_faces, self.support.pose)

    def to_dict(self) -> dict:
        return {
            "support": self.support.to_dict(),
            "obstacles": [o.to_dict() for o in self.obstacles],
            "target": self.target.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "SceneConfig":
        return cls(
            Placement.from_dict(d["support"]),
            tuple(Placement.from_dict(o) for o in d["obstacles"]),
            Placement.from_dict(d["target"]),
        )


@dataclass(frozen=True)
class TaskConfig:
    kind: TaskKind
    init: SceneConfig
    goal: SceneConfig
    transform: RigidPose
    seed: int
    id: str = ""

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "seed": int(self.seed),
            "init": self.init.to_dict(),
            "goal": self.goal.to_dict(),
            "transform": self.transform.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "TaskConfig":
        return cls(
            TaskKind(d["kind"]),
            SceneConfig.from_dict(d["init"]),
            SceneConfig.from_dict(d["goal"]),
            RigidPose.from_dict(d["transform"]),
            int(d["seed"]),
            d.get("id", ""),
        )


def _place_faces(faces, pose: RigidPose) -> list[SupportPolygon]:
    """Support faces moved by a pose that is a yaw plus translation."""
    out = []
    for f in faces:
        pts = np.column_stack([f.polygon, np.full(len(f.polygon), f.z)])
        w = pose.apply(pts)
        out.append(SupportPolygon(float(w[0, 2]), w[:, :2], f.thickness))
    return out


def _top_face(asset: ObjectAsset, pose: RigidPose) -> SupportPolygon:
    """Upper horizontal face of an upright asset, as a support polygon."""
    v = pose.apply(asset.mesh.vertices)
    top = v[:, 2].max()
    ring = v[np.abs(v[:, 2] - top) < 1e-9, :2]
    hull = ring[ConvexHull(ring).vertices]  # counter-clockwise in 2-D
    return SupportPolygon(float(top), hull)


def _yaw_pose(yaw: float, xyz) -> RigidPose:
    return RigidPose.from_rotvec([0.0, 0.0, yaw], xyz)


def resting_pose(asset: ObjectAsset, xy, yaw: float, z: float) -> RigidPose:
    """Upright pose with the lowest vertex exactly on the plane at height ``z``."""
    return _yaw_pose(yaw, [xy[0], xy[1], z - asset.bottom])


def settle_object(
    asset: ObjectAsset,
    support,
    drop_height: float,
    duration: float = 5.0,
    seed: int = 0,
    xy=(0.0, 0.0),
    yaw: float | None = None,
    params: PhysicsParams = PhysicsParams(),
) -> RigidPose:
    """Drop ``asset`` upright from ``drop_height`` above the highest support face under ``xy``."""
    if not drop_height > 0:
        raise SceneError("drop height must be positive")
    faces = list(support) if not isinstance(support, SupportPolygon) else [support]
    under = [f for f in faces if f.contains(np.asarray(xy, float)[None])[0]]
    if not under:
        raise SceneError("settle failed: drop point is not above any support face")
    top = max(f.z for f in under)
    if yaw is None:
        yaw = float(np.random.default_rng(seed).uniform(-np.pi, np.pi))
    start = resting_pose(asset, xy, yaw, top + drop_height)
    try:
        res = simulate(_body(asset), start, duration, supports=faces, params=params)
    except SimulationError as exc:
        raise SceneError(f"settle failed: {exc}") from exc
    final = res.pose
    low = final.apply(asset.mesh.vertices)[:, 2].min()
    if low < top - 1e-4:
        raise SceneError(f"settle failed: object below support by {top - low:.3g} m")
    return final


def _max_tilt(pose: RigidPose) -> float:
    return float(np.arccos(np.clip(pose.matrix[2, 2], -1.0, 1.0)))


@dataclass(frozen=True)
class SceneGenParams:
    obstacle_range: tuple = (2, 5)
    annulus: tuple = (0.05, 0.25)
    max_rejections: int = 100
    settle_duration: float = 5.0
    placing_drop: float = 0.10
    shelving_drop: float = 0.05
    stacking_drop: float = 0.002
    min_travel: float = 0.10


_TASK_ASSETS = {
    TaskKind.PLACING: ("everyday-object", "table"),
    TaskKind.SHELVING: ("everyday-object", "shelf"),
    TaskKind.STACKING: ("brick", "table"),
}


def _split(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *[int(k) for k in keys]])


def generate_config(
    kind,
    catalog: Catalog,
    seed: int,
    target_id: str | None = None,
    params: SceneGenParams = SceneGenParams(),
) -> TaskConfig:
    """One valid task configuration, deterministic in (kind, catalog, seed, target)."""
    kind = TaskKind(kind)
    obj_cat, sup_cat = _TASK_ASSETS[kind]
    pool = sorted(k for k, a in catalog.items() if a.category == obj_cat)
    sup_ids = sorted(k for k, a in catalog.items() if a.category == sup_cat)
    if not pool or not sup_ids:
        raise SceneError(f"catalog has no {obj_cat} / {sup_cat} assets for {kind.value}")
    rng = _split(seed, 0)
    if target_id is None:
        target_id = pool[int(rng.integers(len(pool)))]
    target = catalog[target_id]
    support = catalog[sup_ids[0]]
    sup_place = Placement(support.id, RigidPose.identity())
    faces = _place_faces(support.support_faces, sup_place.pose)
    floor = faces[0]
    top_limit = floor.z + support.clearance

    rejections = 0

    def reject(reason):
        nonlocal rejections
        rejections += 1
        if rejections >= params.max_rejections:
            raise SceneError(f"no valid configuration after {rejections} consecutive rejections ({reason})")

    def fits(asset, pose):
        v = pose.apply(asset.mesh.vertices)
        return bool(floor.contains(v[:, :2], margin=0.005).all() and v[:, 2].max() < top_limit)

    # target placements
    while True:
        margin = target.radius + 0.01
        lo, hi = floor.polygon.min(axis=0) + margin, floor.polygon.max(axis=0) - margin
        if np.any(hi <= lo):
            raise SceneError(f"asset {target.id} does not fit on {support.id}")
        init_xy = rng.uniform(lo, hi)
        base = None
        if kind is TaskKind.STACKING:
            bases = [k for k in pool if k != target_id and _flat_top(catalog[k])]
            if not bases:
                raise SceneError("stacking needs a flat-topped base brick")
            base = catalog[bases[int(rng.integers(len(bases)))]]
            goal_xy = rng.uniform(lo, hi)
        else:
            goal_xy = rng.uniform(lo, hi)
        if np.linalg.norm(goal_xy - init_xy) < params.min_travel:
            reject("init and goal too close")
            continue
        try:
            if kind is TaskKind.STACKING:
                base_pose = resting_pose(base, goal_xy, float(rng.uniform(-np.pi, np.pi)), floor.z)
                if not fits(base, base_pose):
                    reject("base off support")
                    continue
                init_pose = settle_object(
                    target, faces, params.stacking_drop, params.settle_duration,
                    int(rng.integers(1 << 31)), xy=init_xy,
                )
                base_top = _top_face(base, base_pose)
                goal_pose = settle_object(
                    target, faces + [base_top], params.stacking_drop, params.settle_duration,
                    int(rng.integers(1 << 31)), xy=goal_xy,
                )
                bottom = goal_pose.apply(target.mesh.vertices)[:, 2].min()
                if abs(bottom - base_top.z) > 1e-3 or _max_tilt(goal_pose) > 0.05:
                    reject("stacked object unstable")
                    continue
            else:
                drop = params.placing_drop if kind is TaskKind.PLACING else params.shelving_drop
                init_pose = settle_object(
                    target, faces, drop, params.settle_duration, int(rng.integers(1 << 31)), xy=init_xy
                )
                goal_pose = settle_object(
                    target, faces, drop, params.settle_duration, int(rng.integers(1 << 31)), xy=goal_xy
                )
        except SceneError as exc:
            reject(str(exc))
            continue
        if not (fits(target, init_pose) and fits(target, goal_pose)):
            reject("target off support")
            continue
        if base is not None and meshes_collide(base.mesh, base_pose, target.mesh, init_pose):
            reject("base collides with target")
            continue
        break

    tgt_init, tgt_goal = target.mesh.transformed(init_pose), target.mesh.transformed(goal_pose)
    obstacles: list[Placement] = []
    placed: list[TriMesh] = []
    if base is not None:
        obstacles.append(Placement(base.id, base_pose))
        placed.append(base.mesh.transformed(base_pose))
    lo_n, hi_n = params.obstacle_range
    n_obs = int(rng.integers(lo_n, hi_n + 1))
    others = sorted(k for k, a in catalog.items() if a.category == obj_cat and k != target_id)
    if not others:
        others = [target_id]
    while len(obstacles) < n_obs + (base is not None):
        asset = catalog[others[int(rng.integers(len(others)))]]
        anchor = init_xy if rng.random() < 0.5 else goal_xy
        r = rng.uniform(*params.annulus)
        ang = rng.uniform(0, 2 * np.pi)
        xy = anchor + r * np.array([np.cos(ang), np.sin(ang)])
        pose = resting_pose(asset, xy, float(rng.uniform(-np.pi, np.pi)), floor.z)
        if not fits(asset, pose):
            reject("obstacle off support")
            continue
        mesh = asset.mesh.transformed(pose)
        if meshes_collide(mesh, None, tgt_init, None) or meshes_collide(mesh, None, tgt_goal, None):
            reject("obstacle collides with target")
            continue
        if any(meshes_collide(mesh, None, other, None) for other in placed):
            reject("obstacle collides with obstacle")
            continue
        obstacles.append(Placement(asset.id, pose))
        placed.append(mesh)
        rejections = 0

    obstacles = tuple(obstacles)
    init = SceneConfig(sup_place, obstacles, Placement(target.id, init_pose))
    goal = SceneConfig(sup_place, obstacles, Placement(target.id, goal_pose))
    transform = goal_pose.compose(init_pose.inverse())
    return TaskConfig(kind, init, goal, transform, int(seed))


def _flat_top(asset: ObjectAsset) -> bool:
    v = asset.mesh.vertices
    return int(np.sum(np.abs(v[:, 2] - v[:, 2].max()) < 1e-9)) >= 4


def scene_cloud(scene: SceneConfig, catalog: Catalog, n_points: int = N_SCENE_POINTS, seed: int = 0) -> np.ndarray:
    """Support and obstacle surface samples reduced to ``n_points`` by farthest point sampling."""
    merged = primitives.merge(scene.context_meshes(catalog))
    dense = sample_surface(merged, 3 * n_points, seed).points
    return dense[farthest_point_sample(dense, n_points, seed)]


# ------------------------------------------------------------------ prior grasps


@dataclass(frozen=True)
class SamplerParams:
    iterations: int = 200
    energy_threshold: float = 0.03
    tip_tolerance: float = 5e-3
    min_tip_contacts: int = 2
    penetration_weight: float = 10.0
    # fingertips aim slightly below the surface so penalty contacts carry a grip force
    tip_depth: float = 1.5e-3
    # weight on the net fingertip normal: opposing contacts let friction hold the object
    balance_weight: float = 0.005
    start_factor: float = 1.2
    attempts_per_grasp: int = 10
    # lowest z component of the object-to-palm direction; objects rest on supports, so
    # grasps from below would be discarded by the scene expansion anyway
    min_approach_z: float = 0.2


class _GraspRig:
    """Maps a small coordinate vector to full hand parameters around a fixed approach ray.

    Coordinates: palm distance, roll about the ray, two lateral offsets, curl of each of
    the five fingers and thumb opposition.
    """

    lower = np.array([0.0, -np.pi, -0.05, -0.05, 0.0, 0.0, 0.0, 0.0, 0.0, -0.2])
    upper = np.array([0.3, np.pi, 0.05, 0.05, 1.6, 1.6, 1.6, 1.6, 1.2, 1.2])
    steps = np.array([0.005, 0.2, 0.005, 0.005, 0.15, 0.15, 0.15, 0.15, 0.15, 0.15])

    def __init__(self, model: HandModel):
        self.model = model
        self.anchor, self.normal, self.forward = palm_frame(model)
        j = model.rest_joints
        self.j0 = j[0]
        self.axes = {}
        for name, chain in FINGER_CHAINS.items():
            d = j[chain[2]] - j[chain[0]]
            d /= np.linalg.norm(d)
            ax = np.cross(d, self.normal)
            self.axes[name] = ax / np.linalg.norm(ax)
        tip = model.template_vertices[model.fingertips[0]]
        opp = self.forward.copy()
        # positive opposition swings the thumb tip toward the palm side
        if np.cross(opp, tip - j[FINGER_CHAINS["thumb"][0]]) @ self.normal < 0:
            opp = -opp
        self.opp_axis = opp
        side = np.cross(self.normal, self.forward)
        self.rest_frame = np.column_stack([self.normal, self.forward, side])

    def thetas(self, q: np.ndarray, approach: np.ndarray, center: np.ndarray, up: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(q)
        b = len(q)
        a = approach / np.linalg.norm(approach)
        e1 = up - a * (up @ a)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(a, e1)
        target = np.column_stack([-a, e1, np.cross(-a, e1)])
        r_base = target @ self.rest_frame.T
        rolls = Rotation.from_rotvec(a[None] * q[:, 1:2]).as_matrix()
        r_g = rolls @ r_base
        theta = np.zeros((b, 51))
        theta[:, :3] = Rotation.from_matrix(r_g).as_rotvec()
        palm = center + a * q[:, 0:1] + e1 * q[:, 2:3] + e2 * q[:, 3:4]
        theta[:, 48:] = palm - self.j0 - (r_g @ (self.anchor - self.j0))
        for col, name in enumerate(("index", "middle", "ring", "little"), start=4):
            for k, jnt in enumerate(FINGER_CHAINS[name]):
                theta[:, 3 * jnt:3 * jnt + 3] = q[:, col:col + 1] * (1.0, 1.0, 0.8)[k] * self.axes[name]
        t = FINGER_CHAINS["thumb"]
        theta[:, 3 * t[0]:3 * t[0] + 3] = q[:, 9:10] * self.opp_axis + 0.5 * q[:, 8:9] * self.axes["thumb"]
        theta[:, 3 * t[1]:3 * t[1] + 3] = q[:, 8:9] * self.axes["thumb"]
        theta[:, 3 * t[2]:3 * t[2] + 3] = 0.8 * q[:, 8:9] * self.axes["thumb"]
        return theta


@lru_cache(maxsize=4)
def _rig(model: HandModel) -> _GraspRig:
    return _GraspRig(model)


def _grasp_energy(model, theta, sdf: SDFGrid, params: SamplerParams):
    verts = forward_vertices(model, np.zeros((len(theta), 10)), theta)
    d, grad = sdf.query(verts.reshape(-1, 3))
    d = d.reshape(len(theta), -1) + params.tip_depth
    grad = grad.reshape(len(theta), -1, 3)[:, model.fingertips]
    tips = d[:, model.fingertips]
    weight = np.exp(-0.5 * (tips / 3e-3) ** 2)
    balance = np.linalg.norm((weight[..., None] * grad).sum(axis=1), axis=1)
    return (
        np.abs(tips).sum(axis=1)
        + params.penetration_weight * np.maximum(-d, 0.0).sum(axis=1)
        + params.balance_weight * balance
    )


def sample_prior_grasps(
    asset: ObjectAsset, hand_model: HandModel, n: int, seed: int, params: SamplerParams = SamplerParams()
) -> list[HandParams]:
    """Heuristic object-frame grasps by coordinate descent on a fingertip/penetration energy."""
    if n < 1:
        raise SceneError("need n >= 1 grasps")
    sdf = asset_sdf(asset)
    rig = _rig(hand_model)
    center = 0.5 * (asset.mesh.bounds[0] + asset.mesh.bounds[1])
    radius = asset.radius
    grasps, failures = [], 0
    for attempt in range(n * params.attempts_per_grasp):
        rng = _split(seed, attempt)
        a = rng.standard_normal(3)
        a /= np.linalg.norm(a)
        while a[2] < params.min_approach_z:
            a = rng.standard_normal(3)
            a /= np.linalg.norm(a)
        up = rng.standard_normal(3)
        if np.linalg.norm(np.cross(up, a)) < 1e-3:
            up = np.array([0.0, 0.0, 1.0]) if abs(a[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        q = np.array([params.start_factor * radius, 0.0, 0.0, 0.0, 0.3, 0.3, 0.3, 0.3, 0.3, 0.5])
        steps = rig.steps.copy()
        e = float(_grasp_energy(hand_model, rig.thetas(q, a, center, up), sdf, params)[0])
        for _ in range(params.iterations):
            cand = np.repeat(q[None], 2 * len(q), axis=0)
            idx = np.arange(len(q))
            cand[2 * idx, idx] += steps
            cand[2 * idx + 1, idx] -= steps
            cand = np.clip(cand, rig.lower, rig.upper)
            ec = _grasp_energy(hand_model, rig.thetas(cand, a, center, up), sdf, params)
            best = int(np.argmin(ec))
            if ec[best] < e - 1e-12:
                q, e = cand[best], float(ec[best])
            else:
                steps *= 0.5
                if np.all(steps < rig.steps * 1e-3):
                    break
        theta = rig.thetas(q, a, center, up)[0]
        verts = forward_vertices(hand_model, np.zeros((1, 10)), theta[None])[0]
        tip_d = surface_distance(asset.mesh, verts[hand_model.fingertips])
        if e < params.energy_threshold and int(np.sum(tip_d <= params.tip_tolerance)) >= params.min_tip_contacts:
            grasps.append(HandParams(np.zeros(10), theta))
            if len(grasps) == n:
                return grasps
        else:
            failures += 1
    raise SceneError(
        f"prior grasp sampler failed: {failures} of {failures + len(grasps)} attempts did not converge "
        f"({len(grasps)} of {n} grasps found)"
    )


# ------------------------------------------------------------------ filtering and expansion


@dataclass(frozen=True)
class AnnotatedGrasp:
    params: HandParams
    pv: float  # cm^3
    sd: float  # cm


def annotate_grasp(params: HandParams, asset: ObjectAsset, hand_model: HandModel) -> AnnotatedGrasp:
    from .metrics import grasp_quality

    pv, sd = grasp_quality(hand_model, params, asset)
    return AnnotatedGrasp(params, pv, sd)


def filter_grasps(
    grasps,
    asset: ObjectAsset,
    pv_threshold: float = 4.0,
    sd_threshold: float = 3.0,
    hand_model: HandModel | None = None,
) -> list[AnnotatedGrasp]:
    """Keep grasps with PV <= pv_threshold (cm^3) and SD <= sd_threshold (cm).

    Items may be :class:`AnnotatedGrasp` (annotations reused) or bare :class:`HandParams`
    (annotated here, which needs ``hand_model``).
    """
    if not (pv_threshold > 0 and sd_threshold > 0):
        raise SceneError("thresholds must be positive")
    out = []
    for g in grasps:
        if not isinstance(g, AnnotatedGrasp):
            if hand_model is None:
                raise SceneError("hand model required to annotate grasps")
            g = annotate_grasp(g, asset, hand_model)
        if g.pv <= pv_threshold and g.sd <= sd_threshold:
            out.append(g)
    return out


@dataclass(frozen=True)
class GraspRecord:
    config_id: str
    asset_id: str
    params: HandParams
    contact: ContactMap
    pv: float
    sd: float
    init_collision: bool = False
    goal_collision: bool = False

    def __post_init__(self):
        if not self.params.finite:
            raise SceneError("non-finite grasp parameters")


def hand_in_scene(hand_model: HandModel, params: HandParams, pose: RigidPose):
    """World-space hand mesh for an object-frame grasp when the object sits at ``pose``."""
    return forward_hand(hand_model, compose_rigid(hand_model, params, pose))


def hand_collides(hand_mesh, scene: SceneConfig, catalog: Catalog) -> bool:
    closed = hand_mesh.closed()
    return any(meshes_collide(closed, None, m, None) for m in scene.context_meshes(catalog))


def expand_dataset(
    priors: dict,
    configs,
    catalog: Catalog,
    hand_model: HandModel,
    n_points: int = N_OBJECT_POINTS,
    alpha: float = CONTACT_ALPHA,
    saturation: float = CONTACT_SATURATION,
) -> list[GraspRecord]:
    """Pair each config with the priors of its target; keep collision-free hands in both scenes.

    ``priors`` maps asset id to a list of :class:`AnnotatedGrasp`.
    """
    configs = list(configs)
    if not configs or not priors:
        raise SceneError("expand_dataset needs priors and configs")
    records = []
    for ci, cfg in enumerate(configs):
        asset_id = cfg.init.target.asset_id
        asset = catalog[asset_id]
        cloud = object_cloud(asset, n_points)
        for g in priors.get(asset_id, []):
            init_hand = hand_in_scene(hand_model, g.params, cfg.init.target.pose)
            if hand_collides(init_hand, cfg.init, catalog):
                continue
            goal_hand = hand_in_scene(hand_model, g.params, cfg.goal.target.pose)
            if hand_collides(goal_hand, cfg.goal, catalog):
                continue
            local = forward_hand(hand_model, g.params).vertices
            cmap = compute_contact_map(cloud, local, alpha, saturation)
            records.append(GraspRecord(cfg.id or f"cfg_{ci:04d}", asset_id, g.params, cmap, g.pv, g.sd))
    return records


__all__ = [
    "AnnotatedGrasp",
    "annotate_grasp",
    "hand_collides",
    "hand_in_scene",
    "object_cloud",
    "scene_cloud",
    "resting_pose",
    "asset_sdf",
    "SceneGenParams",
    "SamplerParams",
    "GeometryError",
    "GraspRecord",
    "ObjectAsset",
    "Placement",
    "SceneConfig",
    "SceneError",
    "TaskConfig",
    "TaskKind",
    "default_catalog",
    "expand_dataset",
    "filter_grasps",
    "generate_config",
    "sample_prior_grasps",
    "settle_object",
]
