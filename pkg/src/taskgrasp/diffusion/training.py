"""Training loops, sampling helpers and weights/history IO for both denoisers."""
from __future__ import annotations

import csv
import io
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .. import container
from ..hand import HandModel, forward_torch
from .losses import combine, ddpm_loss, grasp_loss_terms, inside_mask, loss_weights
from .networks import ContactDiffuser, GraspDiffuser, NetworkConfig
from .schedule import NoiseSchedule, make_schedule, sample


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def build(self) -> NoiseSchedule:
        return make_schedule(self.T, self.beta_start, self.beta_end)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    deterministic: bool = True
    grad_clip: float = 1.0
    task: str = "placing"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr < 0:
            raise TrainingError("steps >= 0, batch_size >= 1 and lr >= 0 required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["network"] = self.network.to_dict()
        return d

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        d = dict(d)
        d["schedule"] = ScheduleConfig(**d.get("schedule", {}))
        d["network"] = NetworkConfig.from_dict(d["network"]) if "network" in d else NetworkConfig()
        return cls(**d)


def _check_finite(*arrays) -> None:
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise TrainingError("dataset has non-finite values")


@dataclass
class ContactDataset:
    points: np.ndarray  # (S, N, 3)
    d_init: np.ndarray  # (S, N)
    d_goal: np.ndarray
    contact: np.ndarray

    def __post_init__(self):
        s, n = self.points.shape[:2]
        for name in ("d_init", "d_goal", "contact"):
            if getattr(self, name).shape != (s, n):
                raise TrainingError(f"{name} must have shape {(s, n)}")
        if s == 0:
            raise TrainingError("empty dataset")
        _check_finite(self.points, self.d_init, self.d_goal, self.contact)

    def __len__(self):
        return len(self.points)


@dataclass
class GraspDataset:
    points: np.ndarray  # (S, N, 3) object frame
    contact: np.ndarray  # (S, N)
    beta: np.ndarray  # (S, 10)
    theta: np.ndarray  # (S, 51)

    def __post_init__(self):
        s, n = self.points.shape[:2]
        if s == 0:
            raise TrainingError("empty dataset")
        if self.contact.shape != (s, n) or self.beta.shape != (s, 10) or self.theta.shape != (s, 51):
            raise TrainingError("grasp dataset arrays are misaligned")
        _check_finite(self.points, self.contact, self.beta, self.theta)

    def __len__(self):
        return len(self.points)


@contextmanager
def deterministic_mode(enabled: bool = True):
    """Single-threaded, deterministic kernels for the duration of the block."""
    threads = torch.get_num_threads()
    det = torch.are_deterministic_algorithms_enabled()
    if enabled:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.set_num_threads(threads)
        torch.use_deterministic_algorithms(det)


def build_model(kind: str, cfg: NetworkConfig, seed: int):
    cls = {"contact": ContactDiffuser, "grasp": GraspDiffuser}.get(kind)
    if cls is None:
        raise TrainingError(f"unknown denoiser kind {kind!r}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return cls(cfg)


def _t(x, dtype=torch.float32):
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def _step(model, opt, loss, step: int, clip: float):
    if not torch.isfinite(loss):
        raise TrainingError(f"loss diverged (non-finite) at step {step}")
    opt.zero_grad(set_to_none=True)
    loss.backward()
    if clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), clip)
    opt.step()


def train_contact(dataset: ContactDataset, cfg: TrainConfig = TrainConfig(), model: ContactDiffuser | None = None):
    """Minimize the simplified DDPM loss. Returns (model, history of per-step loss dicts)."""
    schedule = cfg.schedule.build()
    with deterministic_mode(cfg.deterministic):
        model = model or build_model("contact", cfg.network, cfg.seed)
        model.train()
        opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
        gen = torch.Generator().manual_seed(cfg.seed + 1)
        pts, di, dg, c = (_t(a) for a in (dataset.points, dataset.d_init, dataset.d_goal, dataset.contact))
        history = []
        for step in range(cfg.steps):
            idx = torch.randint(0, len(dataset), (cfg.batch_size,), generator=gen)
            feats = model.features(pts[idx], di[idx], dg[idx])
            loss = ddpm_loss(lambda x, t: model(x, t, pts[idx], di[idx], dg[idx], features=feats), c[idx],
                             schedule, gen)[0]
            _step(model, opt, loss, step, cfg.grad_clip)
            history.append({"step": step, "loss": loss.item()})
    model.eval()
    return model, history


def fit_normalization(model: GraspDiffuser, theta: np.ndarray, floor: float = 1e-3) -> None:
    theta = np.asarray(theta, dtype=np.float64)
    model.theta_mean.copy_(_t(theta.mean(axis=0)))
    model.theta_std.copy_(_t(np.maximum(theta.std(axis=0), floor)))


def train_grasp(dataset: GraspDataset, hand_model: HandModel, cfg: TrainConfig = TrainConfig(),
                model: GraspDiffuser | None = None):
    """Minimize the weighted sum of the DDPM, reconstruction, penetration and consistency losses."""
    schedule = cfg.schedule.build()
    weights = loss_weights(cfg.task)
    ab = schedule.torch_alpha_bars()
    with deterministic_mode(cfg.deterministic):
        if model is None:
            model = build_model("grasp", cfg.network, cfg.seed)
            fit_normalization(model, dataset.theta)
        model.train()
        opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
        gen = torch.Generator().manual_seed(cfg.seed + 1)
        pts, c, beta, theta = (_t(a) for a in (dataset.points, dataset.contact, dataset.beta, dataset.theta))
        with torch.no_grad():
            gt_verts = forward_torch(hand_model, beta, theta)[0]
        history = []
        for step in range(cfg.steps):
            idx = torch.randint(0, len(dataset), (cfg.batch_size,), generator=gen)
            feats = model.object_features(pts[idx], c[idx])
            z0 = model.normalize(theta[idx])
            l_ddpm, t, _, z_t, eps_pred = ddpm_loss(lambda x, t_: model(x, t_, feats), z0, schedule, gen)
            a = ab[t - 1][:, None]
            z0_hat = (z_t - torch.sqrt(1.0 - a) * eps_pred) / torch.sqrt(a)
            verts = forward_torch(hand_model, beta[idx], model.denormalize(z0_hat))[0]
            inside = inside_mask(verts.detach().double().numpy(), hand_model.faces, hand_model.cap_loop,
                                 pts[idx].double().numpy())
            terms = grasp_loss_terms(verts, gt_verts[idx], pts[idx], c[idx], torch.as_tensor(inside))
            terms["ddpm"] = l_ddpm
            loss = combine(terms, weights)
            _step(model, opt, loss, step, cfg.grad_clip)
            row = {"step": step, "loss": loss.item()}
            row.update({k: float(v.detach()) for k, v in terms.items()})
            history.append(row)
    model.eval()
    return model, history


# ---------------------------------------------------------------------------- sampling


def sample_contact(model: ContactDiffuser, schedule: NoiseSchedule, points, d_init, d_goal, seed: int,
                   n: int = 1) -> np.ndarray:
    """``n`` contact maps for one object/scene condition, clamped to [0, 1]."""
    p, di, dg = (_t(a)[None].expand(n, *np.shape(a)) for a in (points, d_init, d_goal))
    with torch.no_grad():
        feats = model.features(p, di, dg)
        out = sample(lambda x, t: model(x, t, p, di, dg, features=feats), (n, p.shape[1]), schedule, seed,
                     clamp=(0.0, 1.0))
    return out.double().numpy()


def sample_grasps(model: GraspDiffuser, schedule: NoiseSchedule, points, contact, seed: int, n: int = 1) -> np.ndarray:
    """``n`` hand pose vectors (n, 51) conditioned on object points and a task-aware contact map."""
    p, c = (_t(a)[None].expand(n, *np.shape(a)) for a in (points, contact))
    with torch.no_grad():
        feats = model.object_features(p, c)
        z = sample(lambda x, t: model(x, t, feats), (n, 51), schedule, seed)
        return model.denormalize(z).double().numpy()


# ---------------------------------------------------------------------------------- IO


def save_weights(path, model, kind: str, seed: int, extra: dict | None = None) -> None:
    """State dict as float32 tensors plus a shape manifest and seed provenance."""
    state = {k: v.detach().cpu().numpy().astype(np.float32) for k, v in model.state_dict().items()}
    for k, v in state.items():
        if not np.all(np.isfinite(v)):
            raise TrainingError(f"non-finite weights in {k}")
    meta = {
        "format": "taskgrasp-denoiser",
        "kind": kind,
        "seed": int(seed),
        "network": model.cfg.to_dict(),
        "shapes": {k: list(v.shape) for k, v in state.items()},
    }
    meta.update(extra or {})
    container.save(path, state, meta)


def load_weights(path):
    """Rebuild a denoiser from a weights file. Returns (model, meta)."""
    tensors, meta = container.load(path)
    if meta.get("format") != "taskgrasp-denoiser":
        raise TrainingError(f"{path}: not a denoiser weights file")
    model = build_model(meta["kind"], NetworkConfig.from_dict(meta["network"]), 0)
    expected = {k: list(v.shape) for k, v in model.state_dict().items()}
    if expected != meta["shapes"] or any(list(tensors[k].shape) != s for k, s in expected.items() if k in tensors):
        raise TrainingError(f"{path}: shape manifest mismatch with network config")
    model.load_state_dict({k: torch.as_tensor(np.array(v)) for k, v in tensors.items()})
    model.eval()
    return model, meta


def history_csv(history) -> str:
    if not history:
        return "step,loss\n"
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(history[0]), lineterminator="\n")
    w.writeheader()
    for row in history:
        w.writerow({k: v if isinstance(v, int) else repr(float(v)) for k, v in row.items()})
    return buf.getvalue()


__all__ = [
    "ContactDataset",
    "GraspDataset",
    "ScheduleConfig",
    "TrainConfig",
    "TrainingError",
    "build_model",
    "deterministic_mode",
    "history_csv",
    "load_weights",
    "sample_contact",
    "sample_grasps",
    "save_weights",
    "train_contact",
    "train_grasp",
]
