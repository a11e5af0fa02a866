"""Penalty-contact rigid-body integrator for settling objects and grasp displacement tests.

Semi-implicit Euler at ``rate`` Hz split into ``substeps``. Contacts are spring-dampers along
the contact normal plus viscous tangential friction capped by the Coulomb cone. Stiffness
and damping are mass-normalized and shared among the active contacts, so resting
penetration is ``g / omega_contact**2`` regardless of how many points touch. Damping terms
are integrated implicitly (one 6x6 solve per substep), which keeps stiff friction stable.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .geometry import RigidPose, TriMesh, sample_surface
from .sdf import SDFGrid


CONTACT_SAMPLES = 256


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhysicsParams:
    rate: float = 240.0
    substeps: int = 4
    gravity: float = 9.81
    omega_contact: float = 600.0
    damping_ratio: float = 1.0
    tangential_rate: float = 1e4
    friction: float = 0.5
    rest_linear: float = 1e-3
    rest_angular: float = 1e-2
    rest_time: float = 0.1
    max_penetration: float = 0.01
    max_speed: float = 50.0


@dataclass(frozen=True, eq=False)
class SupportPolygon:
    """Horizontal convex face (CCW xy polygon) at height ``z``; contacts push along +z."""

    z: float
    polygon: np.ndarray
    thickness: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "polygon", np.asarray(self.polygon, dtype=np.float64).reshape(-1, 2))

    @classmethod
    def rect(cls, z, xmin, xmax, ymin, ymax, thickness=0.02) -> "SupportPolygon":
        return cls(z, [[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]], thickness)

    def contains(self, xy, margin: float = 0.0) -> np.ndarray:
        """Points whose xy lies inside the polygon shrunk by ``margin``."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        p = self.polygon
        e = np.roll(p, -1, axis=0) - p
        rel = xy[:, None, :] - p[None]
        cross = e[None, :, 0] * rel[..., 1] - e[None, :, 1] * rel[..., 0]
        return np.all(cross >= margin * np.linalg.norm(e, axis=1)[None], axis=1)


def mass_properties(mesh: TriMesh) -> tuple[float, np.ndarray, np.ndarray]:
    """Volume, center of mass and inertia about the center of mass (unit density)."""
    t = mesh.triangles
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    vol6 = np.einsum("ij,ij->i", a, np.cross(b, c))
    volume = vol6.sum() / 6.0
    if not volume > 0:
        raise SimulationError("mesh has non-positive volume")
    com = (vol6[:, None] * (a + b + c)).sum(axis=0) / (24.0 * volume)
    # second moments of each origin-apex tetrahedron
    s = np.stack([a, b, c], axis=1)
    cov = np.einsum("n,nki,nkj->ij", vol6, s, s) + np.einsum("n,ni,nj->ij", vol6, s.sum(1), s.sum(1))
    cov /= 120.0
    cov -= volume * np.outer(com, com)
    inertia = np.trace(cov) * np.eye(3) - cov
    return float(volume), com, inertia


@dataclass(frozen=True, eq=False)
class Body:
    """Rigid body with uniform density; supports see vertices and surface samples as contact probes."""

    mesh: TriMesh
    mass: float
    com: np.ndarray = field(init=False)
    inertia: np.ndarray = field(init=False)
    radius: float = field(init=False)

    def __post_init__(self):
        vol, com, inertia = mass_properties(self.mesh)
        object.__setattr__(self, "com", com)
        object.__setattr__(self, "inertia", inertia * (self.mass / vol))
        object.__setattr__(self, "radius", float(np.linalg.norm(self.mesh.vertices - com, axis=1).max()))

    @cached_property
    def local_points(self) -> np.ndarray:
        """Contact probes relative to the center of mass: vertices plus area-uniform surface samples."""
        samples = sample_surface(self.mesh, CONTACT_SAMPLES, seed=0).points
        return np.vstack([self.mesh.vertices, samples]) - self.com


@dataclass
class SimResult:
    pose: RigidPose
    com_start: np.ndarray
    com_end: np.ndarray
    time: float
    rested: bool
    max_support_penetration: float

    @property
    def displacement(self) -> float:
        return float(np.linalg.norm(self.com_end - self.com_start))


def _skew(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def _expmap(w: np.ndarray) -> np.ndarray:
    ang = np.linalg.norm(w)
    if ang < 1e-12:
        return np.eye(3) + _skew(w)
    k = _skew(w / ang)
    return np.eye(3) + np.sin(ang) * k + (1 - np.cos(ang)) * (k @ k)


def simulate(
    body: Body,
    pose: RigidPose,
    duration: float,
    supports=(),
    hand_points: np.ndarray | None = None,
    sdf: SDFGrid | None = None,
    params: PhysicsParams = PhysicsParams(),
    stop_at_rest: bool = True,
) -> SimResult:
    """Integrate ``body`` (asset frame mesh placed by ``pose``) under gravity.

    ``hand_points`` are fixed world-space samples of a static hand; they interact through
    ``sdf``, the body's signed distance grid in its asset frame.
    """
    rot = pose.matrix.copy()
    x = pose.apply(body.com[None])[0]
    x0 = x.copy()
    v = np.zeros(3)
    w = np.zeros(3)
    m = body.mass
    g = np.array([0.0, 0.0, -params.gravity])
    local = body.local_points
    has_hand = hand_points is not None and len(hand_points) > 0
    if has_hand and sdf is None:
        raise SimulationError("hand contacts need the body's signed distance grid")
    hand = np.asarray(hand_points, dtype=np.float64).reshape(-1, 3) if has_hand else np.zeros((0, 3))
    reach = body.radius + 2 * sdf.spacing if has_hand else 0.0

    dt = 1.0 / (params.rate * params.substeps)
    n_steps = int(round(duration / dt))
    k_tot = m * params.omega_contact**2
    c_tot = 2.0 * params.damping_ratio * m * params.omega_contact
    t_tot = m * params.tangential_rate
    mu = params.friction
    rest_steps = int(round(params.rest_time / dt))
    still = 0
    max_pen = 0.0
    rested = False
    step = 0

    def pose_of(rot_, x_):
        return RigidPose.from_matrix(rot_, x_ - rot_ @ body.com)

    while step < n_steps:
        # free flight with nothing left to hit: finish in closed form
        if not supports:
            if not has_hand:
                free = True
            else:
                free = v[2] <= 0 and hand[:, 2].min() > x[2] + reach and not np.any(
                    np.sum((hand - x) ** 2, axis=1) < reach**2
                )
            if free:
                rem = (n_steps - step) * dt
                x = x + v * rem + 0.5 * g * rem**2
                rot = _expmap(w * rem) @ rot
                step = n_steps
                break

        pts, nrm, depth = [], [], []
        if supports:
            world = local @ rot.T + x
            for s in supports:
                mask = (world[:, 2] < s.z) & (world[:, 2] > s.z - s.thickness)
                if mask.any():
                    mask[mask] = s.contains(world[mask, :2])
                if mask.any():
                    d = s.z - world[mask, 2]
                    max_pen = max(max_pen, float(d.max()))
                    pts.append(world[mask])
                    nrm.append(np.tile([0.0, 0.0, 1.0], (int(mask.sum()), 1)))
                    depth.append(d)
            if max_pen > params.max_penetration:
                raise SimulationError(f"settle failed: penetration {max_pen:.4g} m exceeds {params.max_penetration} m")
        if has_hand:
            near = np.sum((hand - x) ** 2, axis=1) < reach**2
            if near.any():
                hp = hand[near]
                q = (hp - x) @ rot + body.com
                d, grad = sdf.query(q)
                inside = d < 0
                if inside.any():
                    gw = grad[inside] @ rot.T
                    gn = np.linalg.norm(gw, axis=1, keepdims=True)
                    ok = gn[:, 0] > 1e-12
                    pts.append(hp[inside][ok])
                    nrm.append(-(gw[ok] / gn[ok]))
                    depth.append(-d[inside][ok])

        i_world = rot @ body.inertia @ rot.T
        force = m * g
        torque = -np.cross(w, i_world @ w)
        mass6 = np.zeros((6, 6))
        mass6[:3, :3] = m * np.eye(3)
        mass6[3:, 3:] = i_world
        xi = np.concatenate([v, w])
        n_c = sum(len(p) for p in pts)
        if n_c:
            p = np.concatenate(pts)
            n = np.concatenate(nrm)
            dep = np.concatenate(depth)
            r = p - x
            k, c_n = k_tot / n_c, c_tot / n_c
            c_t = np.full(n_c, t_tot / n_c)
            f_spring = (k * dep)[:, None] * n
            force = force + f_spring.sum(axis=0)
            torque = torque + np.cross(r, f_spring).sum(axis=0)
            rx = _skew(r)
            nn = n[:, :, None] * n[:, None, :]
            pt = np.eye(3) - nn
            rhs = mass6 @ xi + dt * np.concatenate([force, torque])
            for _ in range(4):
                dmat = c_n * nn + c_t[:, None, None] * pt
                a = mass6.copy()
                a[:3, :3] += dt * dmat.sum(0)
                a[:3, 3:] += dt * np.einsum("nij,njk->ik", dmat, -rx)
                a[3:, :3] += dt * np.einsum("nij,njk->ik", rx, dmat)
                a[3:, 3:] += dt * np.einsum("nij,njk,nkl->il", rx, dmat, -rx)
                xi_new = np.linalg.solve(a, rhs)
                u = xi_new[:3] + np.cross(xi_new[3:], r)
                un = np.einsum("ij,ij->i", u, n)
                ut = np.linalg.norm(u - un[:, None] * n, axis=1)
                fn = np.maximum(k * dep - c_n * un, 0.0)
                over = c_t * ut > mu * fn * (1 + 1e-9)
                if not over.any():
                    break
                c_t[over] = mu * fn[over] / np.maximum(ut[over], 1e-12)
            v, w = xi_new[:3], xi_new[3:]
        else:
            v = v + dt * force / m
            w = w + dt * np.linalg.solve(i_world, torque)

        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))) or np.linalg.norm(v) > params.max_speed:
            raise SimulationError(f"integrator blow-up at step {step}")
        x = x + dt * v
        rot = _expmap(dt * w) @ rot
        if step % 256 == 255:
            u_, _, vt = np.linalg.svd(rot)
            rot = u_ @ vt
        step += 1

        if np.linalg.norm(v) < params.rest_linear and np.linalg.norm(w) < params.rest_angular:
            still += 1
            if stop_at_rest and still >= rest_steps:
                rested = True
                break
        else:
            still = 0

    return SimResult(pose_of(rot, x), x0, x, step * dt, rested, max_pen)
