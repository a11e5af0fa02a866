"""Procedural watertight primitives (outward-oriented)."""
from __future__ import annotations

import numpy as np

from .geometry import TriMesh

_BOX_FACES = np.array(
    [
        [0, 2, 1], [0, 3, 2],  # z-
        [4, 5, 6], [4, 6, 7],  # z+
        [0, 1, 5], [0, 5, 4],  # y-
        [2, 3, 7], [2, 7, 6],  # y+
        [1, 2, 6], [1, 6, 5],  # x+
        [0, 4, 7], [0, 7, 3],  # x-
    ]
)


def box(extents, center=(0.0, 0.0, 0.0)) -> TriMesh:
    hx, hy, hz = (0.5 * float(e) for e in extents)
    v = np.array(
        [
            [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
            [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
        ]
    )
    return TriMesh(v + np.asarray(center, dtype=np.float64), _BOX_FACES.copy())


def icosphere(radius: float = 1.0, subdivisions: int = 2, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + 5**0.5) / 2.0
    verts = [
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ]
    faces = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    verts = [np.asarray(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    v = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriMesh(v, np.array(faces))


def cylinder(radius: float, height: float, segments: int = 24, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Upright cylinder along z with capped ends."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    h = 0.5 * height
    v = np.concatenate(
        [
            np.column_stack([ring, np.full(segments, -h)]),
            np.column_stack([ring, np.full(segments, h)]),
            [[0.0, 0.0, -h], [0.0, 0.0, h]],
        ]
    )
    bot, top = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces += [[i, j, segments + j], [i, segments + j, segments + i]]
        faces += [[bot, j, i], [top, segments + i, segments + j]]
    return TriMesh(v + np.asarray(center, dtype=np.float64), np.array(faces))


def triangular_prism(side: float, height: float, center=(0.0, 0.0, 0.0)) -> TriMesh:
    r = side / np.sqrt(3.0)
    ang = np.pi / 2 + 2 * np.pi * np.arange(3) / 3
    tri = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    h = 0.5 * height
    v = np.concatenate([np.column_stack([tri, np.full(3, -h)]), np.column_stack([tri, np.full(3, h)])])
    faces = [[0, 2, 1], [3, 4, 5]]
    for i in range(3):
        j = (i + 1) % 3
        faces += [[i, j, 3 + j], [i, 3 + j, 3 + i]]
    return TriMesh(v + np.asarray(center, dtype=np.float64), np.array(faces))


def merge(meshes) -> TriMesh:
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += len(m.vertices)
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


def hollow_box(outer, inner, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Closed shell: outer box plus an inward-facing inner box (the cavity)."""
    out = box(outer, center)
    cav = box(inner, center)
    return merge([out, TriMesh(cav.vertices, cav.faces[:, ::-1])])
