"""Training objectives: simplified DDPM loss and the grasp auxiliary losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..geometry import PointCloud, points_in_mesh
from ..hand import HandMesh, HandModel, HandParams, forward_torch
from ..maps import CONTACT_ALPHA, CONTACT_SATURATION, ContactMap, contact_map_torch, min_distance_torch
from .schedule import NoiseSchedule, q_sample


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    ddpm: float
    recon: float
    penetr: float
    cons: float


LOSS_WEIGHTS = {
    "placing": LossWeights(15.0, 1.0, 5.0, 0.002),
    "shelving": LossWeights(15.0, 1.0, 5.0, 0.002),
    "stacking": LossWeights(10.0, 1.0, 3.0, 0.005),
}


def loss_weights(task) -> LossWeights:
    key = getattr(task, "value", task)
    if key not in LOSS_WEIGHTS:
        raise LossError(f"unknown task kind {task!r}")
    return LOSS_WEIGHTS[key]


def simple_loss(eps_pred: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    return ((eps_pred - eps) ** 2).mean()


def ddpm_loss(denoiser, x0: torch.Tensor, schedule: NoiseSchedule, generator: torch.Generator | None = None,
              t: torch.Tensor | None = None, eps: torch.Tensor | None = None):
    """Simplified noise-prediction loss at uniformly drawn steps.

    ``denoiser(x_t, t)`` maps a batch and its per-row steps to predicted noise.
    Returns (loss, t, eps, x_t, eps_pred) so callers can reuse the draw.
    """
    b = x0.shape[0]
    if t is None:
        t = torch.randint(1, schedule.T + 1, (b,), generator=generator)
    if eps is None:
        eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    x_t = q_sample(x0, t, eps, schedule)
    eps_pred = denoiser(x_t, t)
    return simple_loss(eps_pred, eps), t, eps, x_t, eps_pred


def inside_mask(hand_vertices: np.ndarray, faces: np.ndarray, cap_loop: np.ndarray, object_points: np.ndarray) -> np.ndarray:
    """Object points inside each closed predicted hand, (B, V, 3) x (B, N, 3) -> (B, N) bool."""
    out = np.zeros(object_points.shape[:2], dtype=bool)
    for i, (v, p) in enumerate(zip(hand_vertices, object_points)):
        if not np.all(np.isfinite(v)):
            raise LossError("non-finite predicted hand vertices")
        mesh = HandMesh(v, faces, cap_loop=cap_loop).closed()
        if not mesh.watertight:
            raise LossError("predicted hand mesh is not watertight")
        out[i] = points_in_mesh(mesh, p)
    return out


def recon_loss(pred_verts: torch.Tensor, gt_verts: torch.Tensor) -> torch.Tensor:
    """Mean squared per-vertex Euclidean error."""
    return ((pred_verts - gt_verts) ** 2).sum(-1).mean()


def penetration_loss(pred_verts: torch.Tensor, object_points: torch.Tensor, inside: torch.Tensor) -> torch.Tensor:
    """Mean over inside points of the distance to the nearest predicted vertex; zero when none are inside."""
    inside = torch.as_tensor(inside, dtype=torch.bool)
    per_sample = []
    for v, p, m in zip(pred_verts, object_points, inside):
        if m.any():
            per_sample.append(min_distance_torch(p[m][None], v[None])[0].mean())
        else:
            per_sample.append(pred_verts.new_zeros(()))
    return torch.stack(per_sample).mean()


def consistency_loss(pred_verts, object_points, gt_contact, alpha=CONTACT_ALPHA, saturation=CONTACT_SATURATION):
    return ((contact_map_torch(object_points, pred_verts, alpha, saturation) - gt_contact) ** 2).mean()


def grasp_loss_terms(pred_verts, gt_verts, object_points, gt_contact, inside) -> dict[str, torch.Tensor]:
    return {
        "recon": recon_loss(pred_verts, gt_verts),
        "penetr": penetration_loss(pred_verts, object_points, inside),
        "cons": consistency_loss(pred_verts, object_points, gt_contact),
    }


def combine(terms: dict, weights: LossWeights):
    return (weights.ddpm * terms["ddpm"] + weights.recon * terms["recon"] + weights.penetr * terms["penetr"]
            + weights.cons * terms["cons"])


def grasp_losses(pred_params: HandParams, gt_mesh: HandMesh, object_points, gt_contact, hand_model: HandModel,
                 task="placing", ddpm: float = 0.0) -> dict[str, float]:
    """Loss components for one predicted grasp plus the task-weighted total.

    ``ddpm`` is the simplified diffusion loss of the same sample (zero when evaluating
    a grasp outside training).
    """
    pts = object_points.points if isinstance(object_points, PointCloud) else np.asarray(object_points, dtype=np.float64)
    contact = gt_contact.values if isinstance(gt_contact, ContactMap) else np.asarray(gt_contact, dtype=np.float64)
    if not pred_params.finite or not np.all(np.isfinite(pts)) or not np.all(np.isfinite(contact)):
        raise LossError("non-finite loss inputs")
    if len(contact) != len(pts):
        raise LossError("contact map and object points differ in length")
    with torch.no_grad():
        verts, _ = forward_torch(
            hand_model,
            torch.as_tensor(pred_params.beta, dtype=torch.float64)[None],
            torch.as_tensor(pred_params.theta, dtype=torch.float64)[None],
        )
    inside = inside_mask(verts.numpy(), hand_model.faces, hand_model.cap_loop, pts[None])
    terms = grasp_loss_terms(
        verts,
        torch.as_tensor(gt_mesh.vertices, dtype=torch.float64)[None],
        torch.as_tensor(pts, dtype=torch.float64)[None],
        torch.as_tensor(contact, dtype=torch.float64)[None],
        torch.as_tensor(inside),
    )
    out = {k: float(v) for k, v in terms.items()}
    out["ddpm"] = float(ddpm)
    out["total"] = float(combine(out, loss_weights(task)))
    return out
