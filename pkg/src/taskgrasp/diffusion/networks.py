"""Point feature encoder and the two conditional denoisers."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class NetworkConfig:
    feature_dim: int = 128  # encoder output F
    width: int = 128  # transformer model width
    heads: int = 4
    layers: int = 2
    radius: float = 0.05
    neighbors: int = 32
    mlp: tuple = (64, 128)
    pooled_tokens: int = 16  # GraspDiffuser object queries

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp"] = list(self.mlp)
        return d

    @classmethod
    def from_dict(cls, d) -> "NetworkConfig":
        d = dict(d)
        d["mlp"] = tuple(d["mlp"])
        return cls(**d)


def group_neighbors(points: torch.Tensor, radius: float, k: int, chunk: int = 256) -> tuple[torch.Tensor, torch.Tensor]:
    """Indices (B, N, k) of the k nearest points within ``radius`` and their validity mask.

    Ranking is by exact squared distance with ties broken by lower index (stable sort).
    The query point itself is always its own first neighbor.
    """
    k = min(k, points.shape[1])
    idx, d = [], []
    with torch.no_grad():
        for start in range(0, points.shape[1], chunk):
            q = points[:, start:start + chunk]
            d2 = ((q[:, :, None, :] - points[:, None, :, :]) ** 2).sum(-1)
            d_sorted, order = torch.sort(d2, dim=-1, stable=True)
            idx.append(order[..., :k])
            d.append(d_sorted[..., :k])
    idx, d = torch.cat(idx, dim=1), torch.cat(d, dim=1)
    return idx, d <= radius * radius


class PointFeatureEncoder(nn.Module):
    """One grouping level: shared MLP on (relative offset, neighbor features), masked max-pool."""

    def __init__(self, in_channels: int, cfg: NetworkConfig):
        super().__init__()
        self.radius, self.k = cfg.radius, cfg.neighbors
        dims = [3 + in_channels, *cfg.mlp]
        layers = []
        for a, b in zip(dims[:-1], dims[1:]):
            layers += [nn.Linear(a, b), nn.GELU()]
        self.local = nn.Sequential(*layers)
        self.out = nn.Sequential(nn.Linear(dims[-1] + 3 + in_channels, cfg.feature_dim), nn.GELU(),
                                 nn.Linear(cfg.feature_dim, cfg.feature_dim))

    def forward(self, points: torch.Tensor, features: torch.Tensor | None = None) -> torch.Tensor:
        b, n, _ = points.shape
        feats = points.new_zeros(b, n, 0) if features is None else features
        idx, mask = group_neighbors(points, self.radius, self.k)
        gather = lambda x: torch.gather(  # noqa: E731
            x[:, None].expand(b, n, n, x.shape[-1]), 2, idx[..., None].expand(*idx.shape, x.shape[-1])
        )
        rel = gather(points) - points[:, :, None, :]
        h = self.local(torch.cat([rel / self.radius, gather(feats)], dim=-1))
        h = h.masked_fill(~mask[..., None], float("-inf")).amax(dim=2)
        return self.out(torch.cat([h, points / self.radius, feats], dim=-1))


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer steps, (B,) -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    ang = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class TimeEmbed(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.width = width
        self.mlp = nn.Sequential(nn.Linear(width, width), nn.GELU(), nn.Linear(width, width))

    def forward(self, t: torch.Tensor, dtype) -> torch.Tensor:
        return self.mlp(timestep_embedding(t, self.width).to(dtype))


class Block(nn.Module):
    """Pre-norm attention block; self-attention when ``context`` is None."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.norm_q = nn.LayerNorm(width)
        self.norm_kv = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm_ff = nn.LayerNorm(width)
        self.ff = nn.Sequential(nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width))

    def forward(self, x: torch.Tensor, context: torch.Tensor | None = None) -> torch.Tensor:
        q = self.norm_q(x)
        kv = q if context is None else self.norm_kv(context)
        x = x + self.attn(q, kv, kv, need_weights=False)[0]
        return x + self.ff(self.norm_ff(x))


def _steps(t, batch: int) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.long)
    return t.expand(batch) if t.ndim == 0 else t


class ContactDiffuser(nn.Module):
    """Noise predictor for per-point contact maps.

    Encoder features of the 5-channel cloud (xyz, D_init, D_goal) act as positional
    embeddings of the per-point x_t tokens; the timestep embedding is added to every token.
    """

    def __init__(self, cfg: NetworkConfig = NetworkConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = PointFeatureEncoder(2, cfg)
        self.pos = nn.Linear(cfg.feature_dim, cfg.width)
        self.token = nn.Linear(1, cfg.width)
        self.time = TimeEmbed(cfg.width)
        self.blocks = nn.ModuleList(Block(cfg.width, cfg.heads) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(cfg.width)
        self.head = nn.Linear(cfg.width, 1)

    def features(self, points, d_init, d_goal) -> torch.Tensor:
        return self.encoder(points, torch.stack([d_init, d_goal], dim=-1))

    def forward(self, x_t, t, points, d_init, d_goal, features=None) -> torch.Tensor:
        for name, v in (("x_t", x_t), ("points", points), ("d_init", d_init), ("d_goal", d_goal)):
            if not torch.isfinite(v).all():
                raise ValueError(f"non-finite {name}")
        if features is None:
            features = self.features(points, d_init, d_goal)
        h = self.token(x_t[..., None]) + self.pos(features)
        h = h + self.time(_steps(t, x_t.shape[0]), h.dtype)[:, None, :]
        for blk in self.blocks:
            h = blk(h)
        return self.head(self.norm(h))[..., 0]


class GraspDiffuser(nn.Module):
    """Noise predictor for the 51 hand pose values (17 tokens of 3) given task-aware object features.

    Object tokens (encoder features plus the contact channel) are pooled by learned queries
    with cross-attention, refined with self-attention, and attended to by the hand tokens.
    """

    n_tokens = 17

    def __init__(self, cfg: NetworkConfig = NetworkConfig()):
        super().__init__()
        self.cfg = cfg
        w = cfg.width
        self.encoder = PointFeatureEncoder(0, cfg)
        self.obj_in = nn.Linear(cfg.feature_dim + 1, w)
        self.queries = nn.Parameter(torch.randn(cfg.pooled_tokens, w) * 0.02)
        self.pool = Block(w, cfg.heads)
        self.obj_blocks = nn.ModuleList(Block(w, cfg.heads) for _ in range(cfg.layers))
        self.hand_in = nn.Linear(3, w)
        self.index = nn.Parameter(torch.randn(self.n_tokens, w) * 0.02)
        self.time = TimeEmbed(w)
        self.hand_self = nn.ModuleList(Block(w, cfg.heads) for _ in range(cfg.layers))
        self.hand_cross = nn.ModuleList(Block(w, cfg.heads) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(w)
        self.head = nn.Linear(w, 3)
        self.register_buffer("theta_mean", torch.zeros(51))
        self.register_buffer("theta_std", torch.ones(51))

    def object_features(self, points, contact) -> torch.Tensor:
        """Task-aware object features (B, N, F + 1)."""
        return torch.cat([self.encoder(points), contact[..., None]], dim=-1)

    def forward(self, theta_t, t, object_features) -> torch.Tensor:
        b = theta_t.shape[0]
        if theta_t.shape[1:] != (51,):
            raise ValueError(f"theta_t must be (B, 51), got {tuple(theta_t.shape)}")
        if object_features.ndim != 3 or object_features.shape[-1] != self.cfg.feature_dim + 1:
            raise ValueError(f"object features must be (B, N, {self.cfg.feature_dim + 1})")
        obj = self.obj_in(object_features)
        pooled = self.pool(self.queries[None].expand(b, -1, -1), obj)
        for blk in self.obj_blocks:
            pooled = blk(pooled)
        h = self.hand_in(theta_t.reshape(b, self.n_tokens, 3)) + self.index[None]
        h = h + self.time(_steps(t, b), h.dtype)[:, None, :]
        for s, c in zip(self.hand_self, self.hand_cross):
            h = c(s(h), pooled)
        return self.head(self.norm(h)).reshape(b, 51)

    def normalize(self, theta):
        return (theta - self.theta_mean) / self.theta_std

    def denormalize(self, z):
        return z * self.theta_std + self.theta_mean
