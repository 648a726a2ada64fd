"""Prototype-mask instance segmentation network (one-stage, anchor based).

Backbone -> top-down/bottom-up pyramid fusion -> shared detection head per
level emitting ``1 + 4 + c + k`` channels per anchor, plus a prototype branch
at the stride-8 level.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ShapeError
from .anchors import make_anchors

STRIDES = (8, 16, 32)


@dataclass
class RegionConfig:
    image_size: int = 160
    num_classes: int = 1
    k: int = 32
    backbone_channels: tuple[int, ...] = (16, 16, 32, 32, 64, 64, 96, 96, 128, 128)
    fpn_channels: int = 64
    proto_channels: int = 64
    anchor_sizes: tuple[float, ...] = (12.0, 24.0, 48.0)
    anchor_ratios: tuple[float, ...] = (0.67, 1.0, 1.5)
    proto_source: str = "fused"          # "fused" | "backbone"
    box_loss: str = "bce"                # "bce" | "smooth_l1"
    bn_momentum: float = 0.1             # torch convention: 1 - decay(0.9)
    pos_iou: float = 0.5
    neg_iou: float = 0.4
    negative_ratio: int = 3
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 2.5)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RegionConfig":
        known = {f for f in cls.__dataclass_fields__}
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in known}
        return cls(**kw)

    @property
    def channels_per_anchor(self) -> int:
        return 1 + 4 + self.num_classes + self.k

    @property
    def num_anchors(self) -> int:
        return len(self.anchor_ratios)


class FeaturePyramid(NamedTuple):
    c3: torch.Tensor
    c4: torch.Tensor
    c5: torch.Tensor


class DetectionHeadOutput(NamedTuple):
    """Raw per-anchor predictions, anchors flattened as (row, col, ratio)."""

    confidence: torch.Tensor   # (B, A) logits
    box: torch.Tensor          # (B, A, 4) encoded offsets
    class_logits: torch.Tensor  # (B, A, c)
    coefficients: torch.Tensor  # (B, A, k), tanh-squashed


def conv_bn(cin, cout, stride, momentum):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout, momentum=momentum),
        nn.ReLU(inplace=True),
    )


class Backbone(nn.Module):
    """Ten 3x3 conv layers; every odd layer halves resolution. Taps strides 8/16/32."""

    def __init__(self, channels, momentum=0.1):
        super().__init__()
        if len(channels) != 10:
            raise ValueError("backbone expects 10 channel widths")
        layers = []
        cin = 3
        for i, cout in enumerate(channels):
            layers.append(conv_bn(cin, cout, 2 if i % 2 == 0 else 1, momentum))
            cin = cout
        self.layers = nn.ModuleList(layers)
        self.out_channels = (channels[5], channels[7], channels[9])

    def forward(self, x) -> FeaturePyramid:
        taps = []
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i in (5, 7, 9):
                taps.append(x)
        return FeaturePyramid(*taps)


class PathAggregation(nn.Module):
    """Top-down then bottom-up fusion; all outputs have ``channels`` channels."""

    def __init__(self, in_channels, channels):
        super().__init__()
        self.lateral = nn.ModuleList(nn.Conv2d(c, channels, 1) for c in in_channels)
        self.smooth = nn.ModuleList(nn.Conv2d(channels, channels, 3, padding=1) for _ in in_channels)
        self.down = nn.ModuleList(nn.Conv2d(channels, channels, 3, stride=2, padding=1) for _ in range(2))
        self.post = nn.ModuleList(nn.Conv2d(channels, channels, 3, padding=1) for _ in range(2))

    def forward(self, p: FeaturePyramid) -> FeaturePyramid:
        l3, l4, l5 = (lat(c) for lat, c in zip(self.lateral, p))
        t5 = l5
        t4 = l4 + F.interpolate(t5, size=l4.shape[-2:], mode="nearest")
        t3 = l3 + F.interpolate(t4, size=l3.shape[-2:], mode="nearest")
        t3, t4, t5 = (F.relu(s(t)) for s, t in zip(self.smooth, (t3, t4, t5)))
        n3 = t3
        n4 = F.relu(self.post[0](t4 + self.down[0](n3)))
        n5 = F.relu(self.post[1](t5 + self.down[1](n4)))
        return FeaturePyramid(n3, n4, n5)


class DetectionHead(nn.Module):
    def __init__(self, channels, num_anchors, num_classes, k):
        super().__init__()
        self.num_anchors = num_anchors
        self.num_classes = num_classes
        self.k = k
        self.trunk = nn.Conv2d(channels, channels, 3, padding=1)
        self.pred = nn.Conv2d(channels, num_anchors * (1 + 4 + num_classes + k), 3, padding=1)
        nn.init.normal_(self.pred.weight, std=0.01)
        nn.init.zeros_(self.pred.bias)
        with torch.no_grad():
            per = 1 + 4 + num_classes + k
            # start confidences near the foreground prior so early losses are sane
            self.pred.bias.view(num_anchors, per)[:, 0] = -4.0

    def forward(self, x) -> DetectionHeadOutput:
        b = x.shape[0]
        out = self.pred(F.relu(self.trunk(x)))
        per = 1 + 4 + self.num_classes + self.k
        out = out.permute(0, 2, 3, 1).reshape(b, -1, per)
        return DetectionHeadOutput(out[..., 0], out[..., 1:5], out[..., 5:5 + self.num_classes],
                                   torch.tanh(out[..., 5 + self.num_classes:]))


class ProtoNet(nn.Module):
    def __init__(self, cin, channels, k):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(cin, channels, 3, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(channels, k, 1),
        )

    def forward(self, x):
        return F.relu(self.body(x))


class RegionProposalNet(nn.Module):
    def __init__(self, config: RegionConfig | None = None):
        super().__init__()
        self.config = cfg = config or RegionConfig()
        self.trained = False
        if cfg.image_size % 32:
            raise ValueError("image_size must be a multiple of 32")
        self.backbone = Backbone(cfg.backbone_channels, cfg.bn_momentum)
        self.fpn = PathAggregation(self.backbone.out_channels, cfg.fpn_channels)
        self.head = DetectionHead(cfg.fpn_channels, cfg.num_anchors, cfg.num_classes, cfg.k)
        proto_in = cfg.fpn_channels if cfg.proto_source == "fused" else self.backbone.out_channels[0]
        self.protonet = ProtoNet(proto_in, cfg.proto_channels, cfg.k)
        self.register_buffer("anchors", make_anchors(cfg.image_size, STRIDES, cfg.anchor_sizes, cfg.anchor_ratios),
                             persistent=False)

    def backbone_forward(self, image: torch.Tensor) -> FeaturePyramid:
        """``image``: (B, 3, S, S) or (3, S, S) in [0, 1]."""
        if image.dim() == 3:
            image = image.unsqueeze(0)
        s = self.config.image_size
        if image.dim() != 4 or tuple(image.shape[1:]) != (3, s, s):
            raise ShapeError(f"expected image of shape (B, 3, {s}, {s}), got {tuple(image.shape)}")
        return self.backbone(image)

    def fuse_pyramid(self, p: FeaturePyramid) -> FeaturePyramid:
        return self.fpn(p)

    def detect(self, p: FeaturePyramid) -> list[DetectionHeadOutput]:
        return [self.head(level) for level in p]

    def forward(self, image: torch.Tensor) -> dict:
        raw = self.backbone_forward(image)
        fused = self.fuse_pyramid(raw)
        levels = self.detect(fused)
        protos = self.protonet(fused.c3 if self.config.proto_source == "fused" else raw.c3)
        return {
            "confidence": torch.cat([o.confidence for o in levels], dim=1),
            "box": torch.cat([o.box for o in levels], dim=1),
            "class_logits": torch.cat([o.class_logits for o in levels], dim=1),
            "coefficients": torch.cat([o.coefficients for o in levels], dim=1),
            "protos": protos.permute(0, 2, 3, 1),   # (B, h, w, k)
        }

    def backbone_parameters(self):
        return self.backbone.parameters()
