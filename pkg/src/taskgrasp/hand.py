"""Parametric articulated hand: blend shapes plus linear blend skinning.

The model follows the MANO layout: 778 vertices, 1538 faces, 16 joints (wrist first, then
index, middle, little, ring and thumb chains of three joints each), 10 shape coefficients
and 51 pose values (16 axis-angle rotations followed by a root translation).

The stock surface is open at the wrist (a 16-edge boundary loop). Containment queries use
:meth:`HandMesh.closed`, which caps the wrist with a fan around one extra centroid vertex.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import torch

from . import container
from .geometry import RigidPose, TriMesh

N_VERTS = 778
N_FACES = 1538
N_JOINTS = 16
N_BETA = 10
N_THETA = 51
MANO_PARENTS = np.array([-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 0, 10, 11, 0, 13, 14])
# per finger (thumb, index, middle, ring, little): joint chain, base -> tip
FINGER_CHAINS = {
    "thumb": (13, 14, 15),
    "index": (1, 2, 3),
    "middle": (4, 5, 6),
    "ring": (10, 11, 12),
    "little": (7, 8, 9),
}
MANO_FINGERTIPS = np.array([745, 317, 444, 556, 673])
HAND_MODEL_ENV = "TASKGRASP_HAND_MODEL"


class HandModelError(ValueError):
    pass


class HandModelMissing(HandModelError, FileNotFoundError):
    pass


class VertexCountMismatch(HandModelError):
    pass


class UnnormalizedWeights(HandModelError):
    pass


class KinematicTreeError(HandModelError):
    pass


@dataclass(frozen=True, eq=False)
class HandMesh(TriMesh):
    cap_loop: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def closed(self) -> TriMesh:
        """Watertight copy: the open wrist loop is capped by a fan around its centroid."""
        loop = np.asarray(self.cap_loop, dtype=np.int64)
        if len(loop) == 0:
            return TriMesh(self.vertices, self.faces)
        center = self.vertices[loop].mean(axis=0)
        c = len(self.vertices)
        # loop follows boundary edges a->b of the surface; cap faces traverse them b->a
        cap = np.stack([np.roll(loop, -1), loop, np.full(len(loop), c)], axis=1)
        return TriMesh(np.vstack([self.vertices, center]), np.vstack([self.faces, cap]))


@dataclass(frozen=True)
class HandParams:
    beta: np.ndarray = field(default_factory=lambda: np.zeros(N_BETA))
    theta: np.ndarray = field(default_factory=lambda: np.zeros(N_THETA))

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=np.float64).reshape(N_BETA)
        t = np.asarray(self.theta, dtype=np.float64).reshape(N_THETA)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "theta", t)

    @property
    def rotations(self) -> np.ndarray:
        return self.theta[:48].reshape(N_JOINTS, 3)

    @property
    def translation(self) -> np.ndarray:
        return self.theta[48:]

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.beta)) and np.all(np.isfinite(self.theta)))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.beta, self.theta])

    @classmethod
    def from_vector(cls, v) -> "HandParams":
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:N_BETA], v[N_BETA:])


def _boundary_loop(faces: np.ndarray) -> np.ndarray:
    """Ordered vertices of the (single) boundary loop, following directed edges a->b."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    directed = set(map(tuple, e.tolist()))
    boundary = [(a, b) for a, b in directed if (b, a) not in directed]
    if not boundary:
        return np.zeros(0, dtype=np.int64)
    nxt = dict(boundary)
    if len(nxt) != len(boundary):
        raise HandModelError("boundary is not a simple loop")
    start = min(nxt)
    loop = [start]
    while nxt[loop[-1]] != start:
        loop.append(nxt[loop[-1]])
        if len(loop) > len(boundary):
            raise HandModelError("boundary is not a simple loop")
    if len(loop) != len(boundary):
        raise HandModelError("hand surface has more than one boundary loop")
    return np.array(loop, dtype=np.int64)


def _topological_order(parents: np.ndarray) -> np.ndarray:
    roots = np.nonzero(parents < 0)[0]
    if len(roots) != 1:
        raise KinematicTreeError(f"kinematic tree must have exactly one root, found {len(roots)}")
    order, seen = [int(roots[0])], {int(roots[0])}
    frontier = [int(roots[0])]
    while frontier:
        j = frontier.pop(0)
        for c in np.nonzero(parents == j)[0]:
            c = int(c)
            if c in seen:
                raise KinematicTreeError("kinematic tree has a cycle")
            seen.add(c)
            order.append(c)
            frontier.append(c)
    if len(order) != len(parents):
        raise KinematicTreeError("kinematic tree is disconnected or cyclic")
    return np.array(order)


@dataclass(frozen=True, eq=False)
class HandModel:
    template_vertices: np.ndarray
    faces: np.ndarray
    shape_basis: np.ndarray
    pose_basis: np.ndarray
    joint_regressor: np.ndarray
    skinning_weights: np.ndarray
    parents: np.ndarray
    fingertips: np.ndarray = field(default_factory=lambda: MANO_FINGERTIPS.copy())

    def __post_init__(self):
        conv = {
            "template_vertices": np.float64,
            "shape_basis": np.float64,
            "pose_basis": np.float64,
            "joint_regressor": np.float64,
            "skinning_weights": np.float64,
            "faces": np.int64,
            "parents": np.int64,
            "fingertips": np.int64,
        }
        for name, dt in conv.items():
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=dt))
        self.validate()

    def validate(self) -> None:
        v = self.template_vertices
        if v.shape != (N_VERTS, 3):
            raise VertexCountMismatch(f"vertex count mismatch: expected {N_VERTS}, got {v.shape[0]}")
        if self.faces.shape != (N_FACES, 3):
            raise HandModelError(f"face count mismatch: expected {N_FACES}, got {self.faces.shape[0]}")
        if self.faces.min() < 0 or self.faces.max() >= N_VERTS:
            raise HandModelError("face index out of range")
        if self.shape_basis.shape != (N_BETA, N_VERTS, 3):
            raise HandModelError(f"shape basis must be {(N_BETA, N_VERTS, 3)}")
        if self.pose_basis.shape != (9 * (N_JOINTS - 1), N_VERTS, 3):
            raise HandModelError(f"pose basis must be {(9 * (N_JOINTS - 1), N_VERTS, 3)}")
        if self.joint_regressor.shape != (N_JOINTS, N_VERTS):
            raise HandModelError(f"joint regressor must be {(N_JOINTS, N_VERTS)}")
        w = self.skinning_weights
        if w.shape != (N_VERTS, N_JOINTS):
            raise HandModelError(f"skinning weights must be {(N_VERTS, N_JOINTS)}")
        if np.any(w < 0) or np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-6):
            raise UnnormalizedWeights("unnormalized skinning weights")
        if self.parents.shape != (N_JOINTS,):
            raise KinematicTreeError(f"expected {N_JOINTS} parent indices")
        _topological_order(self.parents)
        if self.fingertips.shape != (5,) or self.fingertips.min() < 0 or self.fingertips.max() >= N_VERTS:
            raise HandModelError("fingertips must be 5 vertex indices")
        arrays = [v, self.shape_basis, self.pose_basis, self.joint_regressor, w]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise HandModelError("non-finite model data")

    @cached_property
    def order(self) -> np.ndarray:
        return _topological_order(self.parents)

    @cached_property
    def cap_loop(self) -> np.ndarray:
        return _boundary_loop(self.faces)

    @cached_property
    def rest_joints(self) -> np.ndarray:
        return self.joint_regressor @ self.template_vertices

    def joints(self, beta=None) -> np.ndarray:
        v = self.template_vertices
        if beta is not None:
            v = v + np.einsum("k,kvi->vi", np.asarray(beta, float), self.shape_basis)
        return self.joint_regressor @ v

    def tensors(self, dtype=torch.float64) -> dict:
        key = str(dtype)
        cache = self.__dict__.setdefault("_tensor_cache", {})
        if key not in cache:
            cache[key] = {
                "template": torch.as_tensor(self.template_vertices, dtype=dtype),
                "shape_basis": torch.as_tensor(self.shape_basis, dtype=dtype),
                "pose_basis": torch.as_tensor(self.pose_basis.reshape(self.pose_basis.shape[0], -1), dtype=dtype),
                "regressor": torch.as_tensor(self.joint_regressor, dtype=dtype),
                "weights": torch.as_tensor(self.skinning_weights, dtype=dtype),
            }
        return cache[key]

    def mesh(self, vertices) -> HandMesh:
        return HandMesh(np.asarray(vertices, dtype=np.float64), self.faces, cap_loop=self.cap_loop)

    # ------------------------------------------------------------------ io

    def save(self, path) -> None:
        container.save(
            path,
            {
                "template_vertices": self.template_vertices,
                "faces": self.faces,
                "shape_basis": self.shape_basis,
                "pose_basis": self.pose_basis,
                "joint_regressor": self.joint_regressor,
                "skinning_weights": self.skinning_weights,
                "parents": self.parents,
                "fingertips": self.fingertips,
            },
            {"format": "taskgrasp-hand", "version": 1},
        )


def load_hand_model(path) -> HandModel:
    """Load and validate a hand model container file."""
    path = Path(path)
    if not path.is_file():
        raise HandModelMissing(f"hand model file not found: {path}")
    try:
        tensors, meta = container.load(path)
    except container.ContainerError as exc:
        raise HandModelError(f"{path}: {exc}") from exc
    if meta.get("format") != "taskgrasp-hand":
        raise HandModelError(f"{path}: not a hand model container")
    required = [
        "template_vertices", "faces", "shape_basis", "pose_basis",
        "joint_regressor", "skinning_weights", "parents",
    ]
    missing = [k for k in required if k not in tensors]
    if missing:
        raise HandModelError(f"{path}: missing tensors {missing}")
    tv = tensors["template_vertices"]
    if tv.ndim != 2 or tv.shape[0] != N_VERTS:
        raise VertexCountMismatch(f"vertex count mismatch: expected {N_VERTS}, got {tv.shape[0]}")
    w = tensors["skinning_weights"]
    # float32 storage: renormalize rounding, but reject genuinely unnormalized rows
    if np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-5):
        raise UnnormalizedWeights("unnormalized skinning weights")
    w = w / w.sum(axis=1, keepdims=True)
    return HandModel(
        template_vertices=tv,
        faces=tensors["faces"],
        shape_basis=tensors["shape_basis"],
        pose_basis=tensors["pose_basis"],
        joint_regressor=tensors["joint_regressor"],
        skinning_weights=w,
        parents=tensors["parents"],
        fingertips=tensors.get("fingertips", MANO_FINGERTIPS),
    )


def default_hand_model() -> HandModel:
    """Model from ``$TASKGRASP_HAND_MODEL`` if set, else the synthetic model (seed 0)."""
    path = os.environ.get(HAND_MODEL_ENV)
    if path:
        return load_hand_model(path)
    return synthetic_hand_model(0)


# ---------------------------------------------------------------------- kinematics


def rodrigues(rotvec: torch.Tensor) -> torch.Tensor:
    """Axis-angle (..., 3) to rotation matrices (..., 3, 3); smooth and exact at zero."""
    x, y, z = rotvec.unbind(-1)
    zero = torch.zeros_like(x)
    k = torch.stack([zero, -z, y, z, zero, -x, -y, x, zero], dim=-1).reshape(*rotvec.shape[:-1], 3, 3)
    a2 = (rotvec * rotvec).sum(-1)
    small = a2 < 1e-8
    a2s = torch.where(small, torch.ones_like(a2), a2)
    a = torch.sqrt(a2s)
    sa = torch.where(small, 1.0 - a2 / 6.0, torch.sin(a) / a)
    ca = torch.where(small, 0.5 - a2 / 24.0, (1.0 - torch.cos(a)) / a2s)
    eye = torch.eye(3, dtype=rotvec.dtype, device=rotvec.device).expand_as(k)
    return eye + sa[..., None, None] * k + ca[..., None, None] * (k @ k)


def forward_torch(model: HandModel, beta: torch.Tensor, theta: torch.Tensor):
    """Batched forward kinematics. ``beta`` (B, 10), ``theta`` (B, 51) -> vertices (B, 778, 3), joints (B, 16, 3)."""
    t = model.tensors(theta.dtype)
    bsz = theta.shape[0]
    v_shaped = t["template"] + torch.einsum("bk,kvi->bvi", beta, t["shape_basis"])
    joints = torch.einsum("jv,bvi->bji", t["regressor"], v_shaped)
    rot = rodrigues(theta[:, :48].reshape(bsz, N_JOINTS, 3))
    eye = torch.eye(3, dtype=theta.dtype)
    feat = (rot[:, 1:] - eye).reshape(bsz, -1)
    v_posed = v_shaped + (feat @ t["pose_basis"]).reshape(bsz, N_VERTS, 3)

    g_rot = [None] * N_JOINTS
    g_tr = [None] * N_JOINTS
    for j in model.order:
        p = model.parents[j]
        if p < 0:
            g_rot[j] = rot[:, j]
            g_tr[j] = joints[:, j]
        else:
            g_rot[j] = g_rot[p] @ rot[:, j]
            g_tr[j] = g_tr[p] + (g_rot[p] @ (joints[:, j] - joints[:, p])[..., None])[..., 0]
    g_rot = torch.stack(g_rot, dim=1)
    g_tr = torch.stack(g_tr, dim=1)
    # remove rest-pose joint location so transforms act on rest-space vertices
    a_tr = g_tr - (g_rot @ joints[..., None])[..., 0]
    w = t["weights"]
    blend_r = torch.einsum("vj,bjxy->bvxy", w, g_rot)
    blend_t = torch.einsum("vj,bjx->bvx", w, a_tr)
    verts = (blend_r @ v_posed[..., None])[..., 0] + blend_t + theta[:, None, 48:51]
    posed_joints = g_tr + theta[:, None, 48:51]
    return verts, posed_joints


def forward_hand(model: HandModel, params: HandParams) -> HandMesh:
    if not params.finite:
        raise HandModelError("non-finite hand parameters")
    verts = forward_vertices(model, params.beta[None], params.theta[None])[0]
    return model.mesh(verts)


def forward_vertices(model: HandModel, beta: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Numpy batch forward: (B, 10), (B, 51) -> (B, 778, 3)."""
    with torch.no_grad():
        v, _ = forward_torch(
            model,
            torch.as_tensor(np.array(beta, dtype=np.float64).reshape(-1, N_BETA)),
            torch.as_tensor(np.array(theta, dtype=np.float64).reshape(-1, N_THETA)),
        )
    return v.numpy()


def compose_rigid(model: HandModel, params: HandParams, pose: RigidPose) -> HandParams:
    """Parameters whose mesh equals ``pose`` applied to the mesh of ``params``."""
    from scipy.spatial.transform import Rotation

    r_g = pose.matrix
    r0 = Rotation.from_rotvec(params.rotations[0]).as_matrix()
    j0 = model.joints(params.beta)[0]
    theta = params.theta.copy()
    theta[:3] = Rotation.from_matrix(r_g @ r0).as_rotvec()
    theta[48:] = r_g @ (j0 + params.translation) + pose.translation - j0
    return HandParams(params.beta, theta)


def palm_frame(model: HandModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rest-pose palm surface point, palm normal (pointing out of the palm) and finger direction."""
    j = model.rest_joints
    wrist, index, little = j[0], j[FINGER_CHAINS["index"][0]], j[FINGER_CHAINS["little"][0]]
    middle = j[FINGER_CHAINS["middle"][0]]
    normal = np.cross(index - wrist, little - wrist)
    normal /= np.linalg.norm(normal)
    forward = middle - wrist
    forward -= normal * (forward @ normal)
    forward /= np.linalg.norm(forward)
    center = np.mean([wrist, index, middle, little, j[FINGER_CHAINS["ring"][0]]], axis=0)
    v = model.template_vertices
    rel = v - center
    inplane = rel - np.outer(rel @ normal, normal)
    near = np.linalg.norm(inplane, axis=1) < 0.015
    depth = (rel[near] @ normal).max() if near.any() else 0.0
    return center + depth * normal, normal, forward


# ------------------------------------------------------------------- synthetic model

_NX, _NY, _NZ = 12, 11, 4
_PALM_X, _PALM_Y, _PALM_Z = 0.084, 0.088, 0.028


def synthetic_hand_model(seed: int = 0) -> HandModel:
    """Deterministic procedural right hand with MANO topology counts.

    Palm: a subdivided box (wrist at y=0, knuckles at y=max, palm side facing -z).
    Fingers: eight or nine rings of eight vertices extruded from 2x2-cell patches and closed
    by a tip vertex. The wrist patch is a 4x4-cell opening whose 16-edge rim is the open
    boundary, exactly as in the stock MANO surface.
    """
    builder = _HandBuilder()
    return builder.build(seed)


class _HandBuilder:
    def __init__(self):
        self.verts: list[np.ndarray] = []
        self.faces: list[list[int]] = []
        self.weights: dict[int, dict[int, float]] = {}

    def _add_vertex(self, p, w: dict[int, float]) -> int:
        self.verts.append(np.asarray(p, dtype=np.float64))
        self.weights[len(self.verts) - 1] = w
        return len(self.verts) - 1

    def build(self, seed: int) -> HandModel:
        cell = np.array([_PALM_X / _NX, _PALM_Y / _NY, _PALM_Z / _NZ])
        lo = np.array([-_PALM_X / 2, 0.0, -_PALM_Z / 2])
        n = (_NX, _NY, _NZ)

        lattice = {}
        for i in range(_NX + 1):
            for j in range(_NY + 1):
                for k in range(_NZ + 1):
                    if i in (0, _NX) or j in (0, _NY) or k in (0, _NZ):
                        lattice[(i, j, k)] = self._add_vertex(lo + cell * (i, j, k), {0: 1.0})

        # (axis, side, u axis, v axis) with u x v = outward normal
        box_faces = [
            (0, 1, 1, 2), (0, 0, 2, 1),
            (1, 1, 2, 0), (1, 0, 0, 2),
            (2, 1, 0, 1), (2, 0, 1, 0),
        ]
        quads = {}
        for axis, side, ua, va in box_faces:
            for a in range(n[ua]):
                for b in range(n[va]):
                    corners = []
                    for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        idx = [0, 0, 0]
                        idx[axis] = n[axis] if side else 0
                        idx[ua], idx[va] = a + du, b + dv
                        corners.append(lattice[tuple(idx)])
                    quads[(axis, side, a, b)] = corners

        holes = {
            "wrist": [(1, 0, x, z) for x in range(4, 8) for z in range(0, 4)],
            # y+ face uses (u=z, v=x)
            "index": [(1, 1, z, x) for z in (1, 2) for x in (1, 2)],
            "middle": [(1, 1, z, x) for z in (1, 2) for x in (4, 5)],
            "ring": [(1, 1, z, x) for z in (1, 2) for x in (7, 8)],
            "little": [(1, 1, z, x) for z in (1, 2) for x in (10, 11)],
            # x- face uses (u=z, v=y)
            "thumb": [(0, 0, z, y) for z in (1, 2) for y in (2, 3)],
        }
        split = (2, 1, 6, 5)  # one back-of-hand quad is split at its center
        removed = {key for keys in holes.values() for key in keys}
        for key, (a, b, c, d) in quads.items():
            if key in removed:
                continue
            if key == split:
                m = self._add_vertex(np.mean([self.verts[x] for x in (a, b, c, d)], axis=0), {0: 1.0})
                self.faces += [[a, b, m], [b, c, m], [c, d, m], [d, a, m]]
            else:
                self.faces += [[a, b, c], [a, c, d]]

        # vertices interior to a hole patch are dropped later (they belong to no face)
        fingers = {
            # name: (face normal, in-face axes e1, e2, axis direction, length, ring fractions)
            "index": (np.array([0, 1.0, 0]), np.array([0, 0, 1.0]), np.array([1.0, 0, 0]),
                      _unit([-0.08, 1.0, 0.0]), 0.074, (0.1, 0.2, 0.32, 0.45, 0.55, 0.65, 0.75, 0.85, 0.93)),
            "middle": (np.array([0, 1.0, 0]), np.array([0, 0, 1.0]), np.array([1.0, 0, 0]),
                       _unit([0.0, 1.0, 0.0]), 0.080, (0.1, 0.2, 0.32, 0.45, 0.55, 0.65, 0.75, 0.85, 0.93)),
            "ring": (np.array([0, 1.0, 0]), np.array([0, 0, 1.0]), np.array([1.0, 0, 0]),
                     _unit([0.08, 1.0, 0.0]), 0.075, (0.12, 0.28, 0.45, 0.55, 0.65, 0.75, 0.85, 0.93)),
            "little": (np.array([0, 1.0, 0]), np.array([0, 0, 1.0]), np.array([1.0, 0, 0]),
                       _unit([0.16, 1.0, 0.0]), 0.060, (0.12, 0.28, 0.45, 0.55, 0.65, 0.75, 0.85, 0.93)),
            "thumb": (np.array([-1.0, 0, 0]), np.array([0, 0, 1.0]), np.array([0, 1.0, 0]),
                      _unit([-1.0, 0.55, -0.45]), 0.062, (0.12, 0.28, 0.45, 0.55, 0.65, 0.75, 0.85, 0.93)),
        }
        faces_np = np.array(self.faces)
        joint_rows = np.zeros((N_JOINTS, 0)).tolist()
        regress: dict[int, list[int]] = {}
        tips = {}
        for name, (nf, e1, e2, axis, length, rings) in fingers.items():
            loop = self._hole_loop(faces_np, quads, holes[name])
            center = np.mean([self.verts[i] for i in loop], axis=0)
            chain = FINGER_CHAINS[name]
            regress[chain[0]] = list(loop)
            rot = _min_rotation(nf, axis)
            u, v = rot @ e1, rot @ e2
            angles = [np.arctan2((self.verts[i] - center) @ e2, (self.verts[i] - center) @ e1) for i in loop]
            s_pip, s_dip = 0.45 * length, 0.75 * length
            half = 0.06 * length
            r0 = 0.0075
            prev = list(loop)
            for frac in rings:
                s = frac * length
                r = r0 * (1.0 - 0.2 * frac) * (0.75 if frac > 0.9 else 1.0)
                w = _finger_weights(s, half, chain, s_pip, s_dip)
                ring = [
                    self._add_vertex(center + s * axis + r * (np.cos(a) * u + np.sin(a) * v), w)
                    for a in angles
                ]
                self._strip(prev, ring)
                if abs(s - s_pip) < 1e-12:
                    regress[chain[1]] = ring
                if abs(s - s_dip) < 1e-12:
                    regress[chain[2]] = ring
                prev = ring
            tip = self._add_vertex(center + length * axis, {chain[2]: 1.0})
            k = len(prev)
            self.faces += [[prev[(i + 1) % k], prev[i], tip] for i in range(k)]
            tips[name] = tip
            faces_np = np.array(self.faces)

        wrist_loop = self._hole_loop(np.array(self.faces), quads, holes["wrist"])
        regress[0] = list(wrist_loop)

        used = np.unique(np.array(self.faces))
        remap = -np.ones(len(self.verts), dtype=np.int64)
        remap[used] = np.arange(len(used))
        verts = np.array(self.verts)[used]
        faces = remap[np.array(self.faces)]
        if len(verts) != N_VERTS or len(faces) != N_FACES:
            raise HandModelError(f"synthetic builder produced {len(verts)} vertices / {len(faces)} faces")

        weights = np.zeros((N_VERTS, N_JOINTS))
        for old, new in enumerate(remap):
            if new >= 0:
                for j, wj in self.weights[old].items():
                    weights[new, j] += wj
        regressor = np.zeros((N_JOINTS, N_VERTS))
        for j, idx in regress.items():
            regressor[j, remap[idx]] = 1.0 / len(idx)
        fingertips = np.array([remap[tips[n]] for n in ("thumb", "index", "middle", "ring", "little")])

        rng = np.random.default_rng(seed)
        centroid = verts.mean(axis=0)
        shape_basis = np.stack(
            [(verts - centroid) @ (0.03 * rng.standard_normal((3, 3))).T for _ in range(N_BETA)]
        )
        pose_basis = np.zeros((9 * (N_JOINTS - 1), N_VERTS, 3))
        return HandModel(
            template_vertices=verts,
            faces=faces,
            shape_basis=shape_basis,
            pose_basis=pose_basis,
            joint_regressor=regressor,
            skinning_weights=weights,
            parents=MANO_PARENTS.copy(),
            fingertips=fingertips,
        )

    def _hole_loop(self, faces: np.ndarray, quads, cells) -> list[int]:
        """Ordered rim of a removed patch, following the surrounding surface's directed edges."""
        rim = set()
        for key in cells:
            rim.update(quads[key])
        e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        directed = set(map(tuple, e.tolist()))
        nxt = {a: b for a, b in directed if (b, a) not in directed and a in rim and b in rim}
        start = min(nxt)
        loop = [start]
        while nxt[loop[-1]] != start:
            loop.append(nxt[loop[-1]])
        return loop

    def _strip(self, a: list[int], b: list[int]) -> None:
        k = len(a)
        for i in range(k):
            j = (i + 1) % k
            self.faces += [[a[j], a[i], b[i]], [a[j], b[i], b[j]]]


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _min_rotation(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    src, dst = _unit(src), _unit(dst)
    axis = np.cross(src, dst)
    s, c = np.linalg.norm(axis), float(src @ dst)
    if s < 1e-12:
        return np.eye(3)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]) / s
    ang = np.arctan2(s, c)
    return np.eye(3) + np.sin(ang) * k + (1 - np.cos(ang)) * k @ k


def _finger_weights(s: float, half: float, chain, s_pip: float, s_dip: float) -> dict[int, float]:
    w = np.zeros(N_JOINTS)
    w[0] = 1.0
    for boundary, child in ((0.0, chain[0]), (s_pip, chain[1]), (s_dip, chain[2])):
        t = float(np.clip((s - boundary + half) / (2 * half), 0.0, 1.0))
        w *= 1.0 - t
        w[child] += t
    return {int(j): float(x) for j, x in enumerate(w) if x > 0}
