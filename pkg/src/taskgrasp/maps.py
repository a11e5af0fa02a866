"""Scene distance maps and task-aware contact maps on an object point cloud."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, PointCloud, _points, nearest_distances

SCENE_ALPHA = 30.0
CONTACT_ALPHA = 100.0
SCENE_SATURATION = 0.20
CONTACT_SATURATION = 1.0

MAP_MAX = 1.0 - 2.0 / (1.0 + math.exp(0.5))  # value at zero distance, ~0.244919


class MapError(ValueError):
    pass


@dataclass(frozen=True)
class DistanceMap:
    values: np.ndarray
    alpha: float
    saturation: float

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class ContactMap:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise MapError("contact map values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split form keeps both tails exact
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def rescale_distance(d_norm, alpha: float):
    """``1 - 2 * sigmoid(alpha * d_norm - 0.5)``, elementwise."""
    if not alpha > 0:
        raise MapError("alpha must be positive")
    d = np.asarray(d_norm, dtype=np.float64)
    if np.any(~np.isfinite(d)) or np.any(d < 0.0) or np.any(d > 1.0):
        raise MapError("normalized distance must lie in [0, 1]")
    out = 1.0 - 2.0 * _sigmoid(alpha * d - 0.5)
    return float(out) if out.ndim == 0 else out


def _normalized(object_points, reference, saturation: float) -> np.ndarray:
    if not saturation > 0:
        raise MapError("saturation must be positive")
    ref = _points(reference)
    if len(ref) == 0:
        raise MapError("empty reference cloud")
    try:
        d = nearest_distances(object_points, ref)
    except GeometryError as exc:
        raise MapError(str(exc)) from exc
    return np.clip(d / saturation, 0.0, 1.0)


def compute_distance_map(
    obj, scene, alpha: float = SCENE_ALPHA, saturation: float = SCENE_SATURATION
) -> DistanceMap:
    d = _normalized(obj, scene, saturation)
    return DistanceMap(np.asarray(rescale_distance(d, alpha)).reshape(-1), float(alpha), float(saturation))


def compute_contact_map(
    obj, hand_vertices, alpha: float = CONTACT_ALPHA, saturation: float = CONTACT_SATURATION
) -> ContactMap:
    d = _normalized(obj, hand_vertices, saturation)
    return ContactMap(np.clip(np.asarray(rescale_distance(d, alpha)).reshape(-1), 0.0, 1.0))


def min_distance_torch(query, reference):
    """Per-query distance to the nearest reference point, (B, N, 3) x (B, M, 3) -> (B, N)."""
    import torch

    d2 = ((query[..., :, None, :] - reference[..., None, :, :]) ** 2).sum(-1)
    return torch.sqrt(torch.clamp(d2.min(dim=-1).values, min=1e-24))


def contact_map_torch(object_points, hand_vertices, alpha=CONTACT_ALPHA, saturation=CONTACT_SATURATION):
    """Differentiable contact map for a batch: (B, N, 3) object points, (B, V, 3) hand vertices."""
    import torch

    d = min_distance_torch(object_points, hand_vertices)
    d = torch.clamp(d / saturation, 0.0, 1.0)
    return torch.clamp(1.0 - 2.0 * torch.sigmoid(alpha * d - 0.5), 0.0, 1.0)


__all__ = [
    "ContactMap",
    "DistanceMap",
    "MapError",
    "PointCloud",
    "compute_contact_map",
    "compute_distance_map",
    "contact_map_torch",
    "rescale_distance",
]
