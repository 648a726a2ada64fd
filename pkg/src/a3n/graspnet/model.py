"""Two-subnet point network regressing a grasp pose from object and context points."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from ..errors import EmptyInputError, ShapeError
from ..geometry import PartitionedPoints
from ..grasp import ANGLE_LIMIT, GraspPose

CM = 0.01   # offsets and log-extents are emitted in centimetres
LOG_EXTENT_BOUND = 50.0
# float32(pi/4) rounds upward; clamp to the largest single that stays inside the limit
_ANGLE_LIMIT_F32 = float(np.nextafter(np.float32(ANGLE_LIMIT), np.float32(0)))


@dataclass
class GraspConfig:
    feature_size: int = 256
    share_subnets: bool = False
    use_context: bool = True
    regress_extents: bool = True
    fixed_extent: float = 0.09          # metres, used when extents are frozen
    ortho_weight: float = 0.001
    max_points: int = 1024
    voxel_resolution: float = 0.005
    context_voxel_resolution: float = 0.01
    context_radius: float = 0.3
    input_scale: float = 10.0           # centred metres -> network units
    stn_widths: tuple[int, int, int] = (32, 64, 128)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GraspConfig":
        names = set(cls.__dataclass_fields__)
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in names})


class Transformer(nn.Module):
    """Predicts a ``dim x dim`` matrix from a point set; starts at the identity."""

    def __init__(self, dim: int, widths=(32, 64, 128)):
        super().__init__()
        self.dim = dim
        a, b, c = widths
        self.point_mlp = nn.Sequential(
            nn.Conv1d(dim, a, 1), nn.ReLU(),
            nn.Conv1d(a, b, 1), nn.ReLU(),
            nn.Conv1d(b, c, 1), nn.ReLU(),
        )
        self.fc = nn.Sequential(nn.Linear(c, 128), nn.ReLU(), nn.Linear(128, dim * dim))
        nn.init.zeros_(self.fc[-1].weight)
        nn.init.zeros_(self.fc[-1].bias)

    def forward(self, x):                       # x: B x dim x N
        g = self.point_mlp(x).amax(dim=2)
        eye = torch.eye(self.dim, dtype=x.dtype, device=x.device)
        return self.fc(g).view(-1, self.dim, self.dim) + eye


class Subnet(nn.Module):
    def __init__(self, feature_size: int = 256, stn_widths=(32, 64, 128)):
        super().__init__()
        self.input_stn = Transformer(3, stn_widths)
        self.mlp1 = nn.Sequential(nn.Conv1d(3, 64, 1), nn.ReLU())
        self.feature_stn = Transformer(64, stn_widths)
        self.mlp2 = nn.Sequential(nn.Conv1d(64, 128, 1), nn.ReLU(), nn.Conv1d(128, feature_size, 1), nn.ReLU())

    def forward(self, pts):
        """``pts``: B x N x 3. Returns (B x m feature, 64x64 feature transform)."""
        x = pts.transpose(1, 2)
        t_in = self.input_stn(x)
        x = torch.bmm(t_in.transpose(1, 2), x)
        x = self.mlp1(x)
        t_feat = self.feature_stn(x)
        x = torch.bmm(t_feat.transpose(1, 2), x)
        x = self.mlp2(x)
        return x.amax(dim=2), t_feat


def orthogonality_penalty(t: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of ||T^T T - I||_F^2."""
    eye = torch.eye(t.shape[-1], dtype=t.dtype)
    return ((torch.bmm(t.transpose(1, 2), t) - eye) ** 2).sum(dim=(1, 2)).mean()


class GraspNet(nn.Module):
    def __init__(self, config: GraspConfig | None = None):
        super().__init__()
        self.config = config or GraspConfig()
        self.trained = False
        m = self.config.feature_size
        widths = tuple(self.config.stn_widths)
        self.object_net = Subnet(m, widths)
        self.context_net = self.object_net if self.config.share_subnets else Subnet(m, widths)
        self.head = nn.Sequential(nn.Linear(2 * m, 256), nn.ReLU(), nn.Linear(256, 128), nn.ReLU(), nn.Linear(128, 8))

    def subnet_forward(self, points, which: str = "object") -> torch.Tensor:
        """Feature vector of one centred point set (N x 3, network units)."""
        pts = torch.as_tensor(points, dtype=next(self.parameters()).dtype)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ShapeError(f"expected N x 3 points, got {tuple(pts.shape)}")
        if len(pts) == 0:
            raise EmptyInputError("subnet needs at least one point")
        net = self.object_net if which == "object" else self.context_net
        return net(pts.unsqueeze(0))[0][0]

    def forward(self, obj, ctx):
        """Batched raw outputs.

        ``obj``, ``ctx``: B x N x 3 padded point sets in network units. Returns
        a dict with ``offsets_cm`` (B x 3), ``log_extents`` (B x 3, log cm),
        ``angles`` (B x 2, pitch then yaw) and ``feature_transforms``.
        """
        f_obj, t_obj = self.object_net(obj)
        if not self.config.use_context:
            ctx = torch.zeros_like(ctx[:, :1])
        f_ctx, t_ctx = self.context_net(ctx)
        raw = self.head(torch.cat([f_obj, f_ctx], dim=1))
        log_ext = raw[:, 3:6]
        if not self.config.regress_extents:
            log_ext = torch.full_like(log_ext, math.log(self.config.fixed_extent / CM))
        return {
            "offsets_cm": raw[:, 0:3],
            "log_extents": log_ext,
            "angles": (ANGLE_LIMIT * torch.tanh(raw[:, 6:8])).clamp(-_ANGLE_LIMIT_F32, _ANGLE_LIMIT_F32),
            "feature_transforms": (t_obj, t_ctx),
        }


def pad_batch(sets: list[np.ndarray], dtype=torch.float32) -> torch.Tensor:
    """Stack variable-size point sets by cycling each one's points up to the longest.

    Repeating points leaves every max-pooled feature unchanged.
    """
    n = max(len(s) for s in sets)
    out = np.empty((len(sets), n, 3))
    for i, s in enumerate(sets):
        out[i] = s[np.arange(n) % len(s)]
    return torch.as_tensor(out, dtype=dtype)


def to_grasp(out: dict, i: int, centroid: np.ndarray, score: float = 1.0) -> GraspPose:
    offsets = out["offsets_cm"][i].detach().double().numpy() * CM
    # bounded so exp stays positive and finite even for wild weights
    log_ext = np.clip(out["log_extents"][i].detach().double().numpy(), -LOG_EXTENT_BOUND, LOG_EXTENT_BOUND)
    extents = np.exp(log_ext) * CM
    pitch, yaw = (float(a) for a in out["angles"][i].detach().double())
    return GraspPose(np.asarray(centroid) + offsets, pitch, yaw, extents, offsets, score)


@torch.no_grad()
def forward_parts(model: GraspNet, obj: np.ndarray, ctx: np.ndarray, centroid, score: float = 1.0) -> GraspPose:
    """Single prepared instance (centred metres) -> GraspPose in the input frame."""
    if len(obj) == 0:
        raise EmptyInputError("object point set is empty")
    s = model.config.input_scale
    dtype = next(model.parameters()).dtype
    ctx = ctx if len(ctx) else np.zeros((1, 3))
    out = model(pad_batch([obj * s], dtype), pad_batch([ctx * s], dtype))
    return to_grasp(out, 0, centroid, score)


def forward(model: GraspNet, parts: PartitionedPoints, seed: int = 0, score: float = 1.0) -> GraspPose:
    """Full preparation (downsample, centre, cap) then inference."""
    from .data import prepare
    obj, ctx, centroid = prepare(parts, model.config, seed)
    return forward_parts(model, obj, ctx, centroid, score)
