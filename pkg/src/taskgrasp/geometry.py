"""Geometric kernels shared by every other module.

Units are meters throughout; only :func:`overlap_volume` reports cm^3.
All functions are pure: inputs are never mutated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

SURFACE_TOL = 1e-7
WINDING_THRESHOLD = 0.5


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    features: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point cloud has non-finite coordinates")
        for name, values in self.features.items():
            if len(values) != len(pts):
                raise GeometryError(f"feature {name!r} length {len(values)} != {len(pts)} points")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise GeometryError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @cached_property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @cached_property
    def watertight(self) -> bool:
        if len(self.faces) == 0:
            return False
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        _, counts = np.unique(np.sort(e, axis=1), axis=0, return_counts=True)
        if not np.all(counts == 2):
            return False
        # each undirected edge must appear once in each direction (consistent orientation)
        _, dcounts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(dcounts == 1))

    @cached_property
    def face_areas(self) -> np.ndarray:
        t = self.triangles
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    @cached_property
    def bounds(self) -> np.ndarray:
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    @cached_property
    def volume(self) -> float:
        t = self.triangles
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    def transformed(self, pose: "RigidPose") -> "TriMesh":
        return TriMesh(pose.apply(self.vertices), self.faces)

    def translated(self, offset) -> "TriMesh":
        return TriMesh(self.vertices + np.asarray(offset, dtype=np.float64), self.faces)


@dataclass(frozen=True)
class RigidPose:
    """Rotation as a unit quaternion (w, x, y, z) plus translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise GeometryError(f"quaternion norm {np.linalg.norm(q)} is not 1")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls()

    @classmethod
    def from_matrix(cls, rot: np.ndarray, translation=(0.0, 0.0, 0.0)) -> "RigidPose":
        x, y, z, w = Rotation.from_matrix(np.asarray(rot, dtype=np.float64)).as_quat()
        q = np.array([w, x, y, z])
        q /= np.linalg.norm(q)
        if q[0] < 0:
            q = -q
        return cls(q, translation)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "RigidPose":
        return cls.from_matrix(Rotation.from_rotvec(np.asarray(rotvec, float)).as_matrix(), translation)

    @property
    def matrix(self) -> np.ndarray:
        w, x, y, z = self.rotation
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix.T + self.translation

    def compose(self, other: "RigidPose") -> "RigidPose":
        """``self ∘ other``: apply ``other`` first."""
        rot = self.matrix @ other.matrix
        return RigidPose.from_matrix(rot, self.matrix @ other.translation + self.translation)

    def inverse(self) -> "RigidPose":
        rt = self.matrix.T
        return RigidPose.from_matrix(rt, -rt @ self.translation)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d) -> "RigidPose":
        # stored quaternions are already unit length; keep them bit-exact
        return cls(d["rotation"], d["translation"])


def _points(x) -> np.ndarray:
    if isinstance(x, PointCloud):
        return x.points
    return np.asarray(x, dtype=np.float64).reshape(-1, 3)


# --------------------------------------------------------------------------- sampling


def sample_surface(mesh: TriMesh, n: int, seed: int) -> PointCloud:
    """Area-weighted uniform surface sampling; deterministic for a given seed."""
    if len(mesh.faces) == 0:
        raise GeometryError("degenerate mesh")
    if n < 1:
        raise GeometryError("sample count must be >= 1")
    areas = mesh.face_areas
    total = areas.sum()
    if not total > 0:
        raise GeometryError("degenerate mesh")
    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=n, p=areas / total)
    r1, r2 = rng.random(n), rng.random(n)
    flip = r1 + r2 > 1.0
    r1[flip], r2[flip] = 1.0 - r1[flip], 1.0 - r2[flip]
    t = mesh.triangles[face]
    pts = t[:, 0] + r1[:, None] * (t[:, 1] - t[:, 0]) + r2[:, None] * (t[:, 2] - t[:, 0])
    return PointCloud(pts, {"face": face})


def farthest_point_sample(cloud, k: int, seed: int) -> np.ndarray:
    pts = _points(cloud)
    n = len(pts)
    if not 1 <= k <= n:
        raise GeometryError(f"cannot select {k} of {n} points")
    rng = np.random.default_rng(seed)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    mind = np.sum((pts - pts[chosen[0]]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(mind))  # argmax returns the first maximum: lowest-index tie break
        chosen[i] = nxt
        np.minimum(mind, np.sum((pts - pts[nxt]) ** 2, axis=1), out=mind)
    return chosen


def nearest_distances(query, reference) -> np.ndarray:
    """Exact Euclidean distance from each query point to its nearest reference point."""
    q, r = _points(query), _points(reference)
    if len(r) == 0:
        raise GeometryError("empty reference cloud")
    if len(q) == 0:
        return np.zeros(0)
    d, _ = cKDTree(r).query(q, k=1)
    return d


def nearest_indices(query, reference) -> tuple[np.ndarray, np.ndarray]:
    q, r = _points(query), _points(reference)
    if len(r) == 0:
        raise GeometryError("empty reference cloud")
    d, i = cKDTree(r).query(q, k=1)
    return d, i


# --------------------------------------------------------------------------- containment


def _require_watertight(mesh: TriMesh) -> None:
    if not mesh.watertight:
        raise GeometryError("containment undefined: mesh is not watertight")


def winding_numbers(mesh: TriMesh, points, chunk: int = 1 << 20) -> np.ndarray:
    """Generalized winding number via summed signed solid angles."""
    pts = _points(points)
    tri = mesh.triangles
    out = np.zeros(len(pts))
    step = max(1, chunk // max(len(tri), 1))
    for s in range(0, len(pts), step):
        p = pts[s : s + step]
        a = tri[None, :, 0, :] - p[:, None, :]
        b = tri[None, :, 1, :] - p[:, None, :]
        c = tri[None, :, 2, :] - p[:, None, :]
        la, lb, lc = (np.linalg.norm(x, axis=2) for x in (a, b, c))
        det = np.einsum("pfi,pfi->pf", a, np.cross(b, c))
        den = (
            la * lb * lc
            + np.einsum("pfi,pfi->pf", a, b) * lc
            + np.einsum("pfi,pfi->pf", b, c) * la
            + np.einsum("pfi,pfi->pf", c, a) * lb
        )
        out[s : s + step] = np.arctan2(det, den).sum(axis=1) / (2.0 * np.pi)
    return out


def point_triangle_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Exact point-triangle distance, broadcast over leading axes (closest-point regions)."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("...i,...i", ab, ap)
    d2 = np.einsum("...i,...i", ac, ap)
    bp = p - b
    d3 = np.einsum("...i,...i", ab, bp)
    d4 = np.einsum("...i,...i", ac, bp)
    cp = p - c
    d5 = np.einsum("...i,...i", ab, cp)
    d6 = np.einsum("...i,...i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = np.where(denom != 0, vb / denom, 0.0)
        w = np.where(denom != 0, vc / denom, 0.0)
        closest = a + v[..., None] * ab + w[..., None] * ac
        # edge regions
        t_ab = np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0)
        e_ab = a + t_ab[..., None] * ab
        t_ac = np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0)
        e_ac = a + t_ac[..., None] * ac
        t_bc = np.where((d4 - d3) + (d5 - d6) != 0, (d4 - d3) / ((d4 - d3) + (d5 - d6)), 0.0)
        e_bc = b + t_bc[..., None] * (c - b)
    conds = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (d6 >= 0) & (d5 <= d6),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
    ]
    choices = [a, b, c, e_ab, e_ac, e_bc]
    q = closest
    for cond, ch in zip(reversed(conds), reversed(choices)):
        q = np.where(cond[..., None], np.broadcast_to(ch, q.shape), q)
    return np.linalg.norm(p - q, axis=-1)


def _near_surface(mesh: TriMesh, pts: np.ndarray, tol: float) -> np.ndarray:
    tri = mesh.triangles
    lo, hi = tri.min(axis=1) - tol, tri.max(axis=1) + tol
    near = np.zeros(len(pts), dtype=bool)
    step = max(1, (1 << 20) // max(len(tri), 1))
    for s in range(0, len(pts), step):
        p = pts[s : s + step]
        cand = np.all((p[:, None, :] >= lo[None]) & (p[:, None, :] <= hi[None]), axis=2)
        pi, fi = np.nonzero(cand)
        if len(pi) == 0:
            continue
        d = point_triangle_distance(p[pi], tri[fi, 0], tri[fi, 1], tri[fi, 2])
        hit = pi[d < tol]
        near[s + np.unique(hit)] = True
    return near


def points_in_mesh(mesh: TriMesh, points, tol: float = SURFACE_TOL) -> np.ndarray:
    """Strict containment for many points; points within ``tol`` of the surface are outside."""
    _require_watertight(mesh)
    pts = _points(points)
    inside = np.zeros(len(pts), dtype=bool)
    lo, hi = mesh.bounds
    cand = np.nonzero(np.all((pts > lo) & (pts < hi), axis=1))[0]
    if len(cand) == 0:
        return inside
    w = winding_numbers(mesh, pts[cand])
    cand = cand[w > WINDING_THRESHOLD]
    if len(cand):
        cand = cand[~_near_surface(mesh, pts[cand], tol)]
    inside[cand] = True
    return inside


def point_in_mesh(mesh: TriMesh, point) -> bool:
    return bool(points_in_mesh(mesh, np.asarray(point, dtype=np.float64).reshape(1, 3))[0])


def lattice_winding(mesh: TriMesh, origin, spacing: float, shape, tol: float = SURFACE_TOL) -> np.ndarray:
    """Integer winding numbers on the lattice ``origin + spacing * (i, j, k)``.

    Signed ray crossings along +z per (i, j) column. Ray hits on shared edges and vertices are
    resolved with a top-left ownership rule evaluated on canonically ordered edges, so each
    crossing is counted once. Lattice points within ``tol`` of a crossing along the ray get
    winding 0 (treated as outside).
    """
    _require_watertight(mesh)
    origin = np.asarray(origin, dtype=np.float64)
    nx, ny, nz = (int(s) for s in shape)
    acc = np.zeros((nx, ny, nz + 1), dtype=np.int64)
    onsurf = np.zeros((nx, ny, nz), dtype=bool)
    if nx == 0 or ny == 0 or nz == 0:
        return acc[..., :nz]
    v = mesh.vertices
    f = mesh.faces
    p = v[f]
    area2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (
        p[:, 2, 0] - p[:, 0, 0]
    )
    keep = area2 != 0
    f, p, area2 = f[keep], p[keep], area2[keep]
    orient = np.sign(area2)

    xs = (p[:, :, 0] - origin[0]) / spacing
    ys = (p[:, :, 1] - origin[1]) / spacing
    i0 = np.maximum(np.ceil(xs.min(axis=1)).astype(np.int64), 0)
    i1 = np.minimum(np.floor(xs.max(axis=1)).astype(np.int64), nx - 1)
    j0 = np.maximum(np.ceil(ys.min(axis=1)).astype(np.int64), 0)
    j1 = np.minimum(np.floor(ys.max(axis=1)).astype(np.int64), ny - 1)
    ni = np.maximum(i1 - i0 + 1, 0)
    nj = np.maximum(j1 - j0 + 1, 0)
    counts = ni * nj
    total = int(counts.sum())
    if total == 0:
        return acc[..., :nz]
    tri = np.repeat(np.arange(len(f)), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(total) - start
    ii = i0[tri] + local // nj[tri]
    jj = j0[tri] + local % nj[tri]
    px = origin[0] + ii * spacing
    py = origin[1] + jj * spacing

    inside = np.ones(total, dtype=bool)
    lam = np.zeros((total, 3))
    # edge k runs from corner k to corner k+1 in the stored winding; the opposite corner is k+2
    for k in range(3):
        ia, ib = f[tri, k], f[tri, (k + 1) % 3]
        lo = np.minimum(ia, ib)
        hi = np.maximum(ia, ib)
        xl, yl = v[lo, 0], v[lo, 1]
        xh, yh = v[hi, 0], v[hi, 1]
        e = (xh - xl) * (py - yl) - (yh - yl) * (px - xl)
        # orient so that the interior of the (2D counter-clockwise) triangle is positive
        dir_sign = np.where(ia == lo, 1.0, -1.0) * orient[tri]
        e = e * dir_sign
        dx = (xh - xl) * dir_sign
        dy = (yh - yl) * dir_sign
        owns = (dy < 0) | ((dy == 0) & (dx < 0))
        inside &= (e > 0) | ((e == 0) & owns)
        lam[:, (k + 2) % 3] = e
    sel = np.nonzero(inside)[0]
    if len(sel) == 0:
        return acc[..., :nz]
    lam = lam[sel]
    tsel = tri[sel]
    lam = lam / lam.sum(axis=1, keepdims=True)
    zc = np.einsum("ij,ij->i", lam, p[tsel, :, 2])
    contrib = -orient[tsel].astype(np.int64)
    ii, jj = ii[sel], jj[sel]
    kz = (zc - origin[2]) / spacing
    kstart = np.clip(np.floor(kz).astype(np.int64) + 1, 0, nz)
    np.add.at(acc, (ii, jj, kstart), contrib)
    knear = np.rint(kz).astype(np.int64)
    ok = (knear >= 0) & (knear < nz)
    near = ok & (np.abs(origin[2] + np.clip(knear, 0, nz - 1) * spacing - zc) < tol)
    onsurf[ii[near], jj[near], knear[near]] = True
    wind = np.cumsum(acc, axis=2)[..., :nz]
    wind[onsurf] = 0
    return wind


def lattice_inside(mesh: TriMesh, origin, spacing: float, shape) -> np.ndarray:
    return lattice_winding(mesh, origin, spacing, shape) > WINDING_THRESHOLD


def overlap_volume(a: TriMesh, b: TriMesh, voxel_edge: float = 1e-3) -> float:
    """Voxel-counted intersection volume in cm^3 (voxel centers inside both meshes)."""
    if voxel_edge <= 0:
        raise GeometryError("voxel edge must be positive")
    _require_watertight(a)
    _require_watertight(b)
    lo = np.maximum(a.bounds[0], b.bounds[0])
    hi = np.minimum(a.bounds[1], b.bounds[1])
    if np.any(hi <= lo):
        return 0.0
    shape = np.maximum(np.ceil((hi - lo) / voxel_edge - 1e-9).astype(np.int64), 1)
    origin = lo + 0.5 * voxel_edge
    inside = lattice_inside(a, origin, voxel_edge, shape)
    if not inside.any():
        return 0.0
    inside &= lattice_inside(b, origin, voxel_edge, shape)
    return float(inside.sum()) * voxel_edge**3 * 1e6


# --------------------------------------------------------------------------- collision


def _segments_hit_triangles(s0, s1, ta, tb, tc, eps=1e-12) -> np.ndarray:
    """Möller-Trumbore segment/triangle test over aligned pair arrays."""
    d = s1 - s0
    e1, e2 = tb - ta, tc - ta
    h = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(det) > eps * np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1) * np.linalg.norm(d, axis=1)
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = s0 - ta
    u = np.einsum("ij,ij->i", s, h) * inv
    q = np.cross(s, e1)
    v = np.einsum("ij,ij->i", d, q) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    return ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t >= 0) & (t <= 1)


def _edges_cross(ma: TriMesh, mb: TriMesh) -> bool:
    edges = ma.edges
    s0, s1 = ma.vertices[edges[:, 0]], ma.vertices[edges[:, 1]]
    elo, ehi = np.minimum(s0, s1), np.maximum(s0, s1)
    tri = mb.triangles
    tlo, thi = tri.min(axis=1), tri.max(axis=1)
    # restrict to edges overlapping mb's box
    blo, bhi = mb.bounds
    keep = np.all((ehi >= blo) & (elo <= bhi), axis=1)
    if not keep.any():
        return False
    s0, s1, elo, ehi = s0[keep], s1[keep], elo[keep], ehi[keep]
    step = max(1, (1 << 20) // max(len(tri), 1))
    for s in range(0, len(s0), step):
        sl = slice(s, s + step)
        cand = np.all(
            (ehi[sl, None, :] >= tlo[None]) & (elo[sl, None, :] <= thi[None]), axis=2
        )
        ei, fi = np.nonzero(cand)
        if len(ei) == 0:
            continue
        hit = _segments_hit_triangles(s0[sl][ei], s1[sl][ei], tri[fi, 0], tri[fi, 1], tri[fi, 2])
        if hit.any():
            return True
    return False


def meshes_collide(a: TriMesh, pose_a: RigidPose | None, b: TriMesh, pose_b: RigidPose | None) -> bool:
    """True iff any triangle pair intersects or one mesh lies inside the other."""
    ma = a.transformed(pose_a) if pose_a is not None else a
    mb = b.transformed(pose_b) if pose_b is not None else b
    if len(ma.faces) == 0 or len(mb.faces) == 0:
        return False
    if np.any(ma.bounds[1] < mb.bounds[0]) or np.any(mb.bounds[1] < ma.bounds[0]):
        return False
    if _edges_cross(ma, mb) or _edges_cross(mb, ma):
        return True
    if mb.watertight and point_in_mesh(mb, ma.vertices[0]):
        return True
    if ma.watertight and point_in_mesh(ma, mb.vertices[0]):
        return True
    return False
