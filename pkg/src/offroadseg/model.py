"""Segmentation network: residual pyramid backbone, UPerNet-style decoder, loss.

The decoder is the standard pyramid-pooling + top-down-fusion design; the
backbone is a small residual net exposing the same four-level pyramid
interface (strides 4/8/16/32) so heavier backbones can be swapped in behind
it. Feature normalization is group-style so tiny batches behave.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .taxonomy import IGNORE_ID, NUM_CLASSES

STRIDES = (4, 8, 16, 32)


class EmptyLossWarning(RuntimeWarning):
    """Every pixel in the batch carried the ignore id."""


@dataclass
class ModelConfig:
    backbone_channels: tuple[int, int, int, int] = (32, 64, 128, 256)
    blocks_per_stage: int = 1
    decoder_channels: int = 128
    psp_bin_sizes: tuple[int, ...] = (1, 2, 3, 6)
    num_classes: int = NUM_CLASSES
    norm_kind: str = "group"
    norm_groups: int = 8
    input_mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    input_std: tuple[float, float, float] = (0.229, 0.224, 0.225)

    def __post_init__(self):
        self.backbone_channels = tuple(int(c) for c in self.backbone_channels)
        self.psp_bin_sizes = tuple(int(b) for b in self.psp_bin_sizes)
        self.input_mean = tuple(float(v) for v in self.input_mean)
        self.input_std = tuple(float(v) for v in self.input_std)
        if self.num_classes != NUM_CLASSES:
            raise ValueError(f"num_classes must be {NUM_CLASSES}, got {self.num_classes}")
        if len(self.backbone_channels) != len(STRIDES):
            raise ValueError(f"backbone_channels must list {len(STRIDES)} stage widths")
        if any(c <= 0 for c in self.backbone_channels) or self.decoder_channels <= 0:
            raise ValueError("channel widths must be positive")
        if self.blocks_per_stage <= 0:
            raise ValueError(f"blocks_per_stage must be >= 1, got {self.blocks_per_stage}")
        if not self.psp_bin_sizes or any(b <= 0 for b in self.psp_bin_sizes):
            raise ValueError(f"psp_bin_sizes must be positive, got {self.psp_bin_sizes}")
        if list(self.psp_bin_sizes) != sorted(set(self.psp_bin_sizes)):
            raise ValueError(f"psp_bin_sizes must be strictly increasing, got {self.psp_bin_sizes}")
        if self.norm_kind not in ("group", "batch"):
            raise ValueError(f"norm_kind must be 'group' or 'batch', got {self.norm_kind!r}")
        if self.norm_kind == "group":
            for c in (*self.backbone_channels, self.decoder_channels):
                if c % self.norm_groups:
                    raise ValueError(f"channel width {c} not divisible by norm_groups={self.norm_groups}")
        if len(self.input_mean) != 3 or len(self.input_std) != 3 or any(s <= 0 for s in self.input_std):
            raise ValueError("input_mean/input_std must be 3 channel values with std > 0")


def _norm(channels: int, cfg: ModelConfig) -> nn.Module:
    if cfg.norm_kind == "batch":
        return nn.BatchNorm2d(channels)
    return nn.GroupNorm(cfg.norm_groups, channels)


def _conv_norm_act(cin: int, cout: int, cfg: ModelConfig, kernel: int = 3, stride: int = 1,
                   padding_mode: str = "zeros") -> nn.Sequential:
    # bias omitted: the following norm layer would cancel it anyway
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2, padding_mode=padding_mode, bias=False),
        _norm(cout, cfg),
        nn.ReLU(inplace=True),
    )


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, cfg: ModelConfig):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.norm1 = _norm(channels, cfg)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.norm2 = _norm(channels, cfg)

    def forward(self, x):
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return F.relu(out + x)


class PyramidBackbone(nn.Module):
    """Four-stage residual encoder emitting features at strides 4/8/16/32."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.backbone_channels
        self.stem = nn.Sequential(
            _conv_norm_act(3, c[0], cfg, stride=2),
            _conv_norm_act(c[0], c[0], cfg, stride=2),
        )
        stages = []
        for i, width in enumerate(c):
            layers: list[nn.Module] = []
            if i > 0:
                layers.append(_conv_norm_act(c[i - 1], width, cfg, stride=2))
            layers.extend(ResidualBlock(width, cfg) for _ in range(cfg.blocks_per_stage))
            stages.append(nn.Sequential(*layers))
        self.stages = nn.ModuleList(stages)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, ...]:
        h, w = x.shape[-2:]
        if h % 32 or w % 32:
            raise ValueError(f"input dims must be divisible by 32, got {h}x{w}")
        x = self.stem(x)
        levels = []
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return tuple(levels)


class PyramidPooling(nn.Module):
    """Multi-bin adaptive pooling of the coarsest feature for global context."""

    def __init__(self, in_channels: int, channels: int, bin_sizes: tuple[int, ...], cfg: ModelConfig):
        super().__init__()
        self.bin_sizes = bin_sizes
        self.branches = nn.ModuleList(
            nn.Sequential(nn.AdaptiveAvgPool2d(b), _conv_norm_act(in_channels, channels, cfg, kernel=1))
            for b in bin_sizes
        )

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        h, w = x.shape[-2:]
        if max(self.bin_sizes) > min(h, w):
            raise ValueError(
                f"psp bin {max(self.bin_sizes)} exceeds the {h}x{w} deepest feature; "
                "use a larger input or smaller psp_bin_sizes"
            )
        outs = []
        for branch in self.branches:
            y = branch(x)
            outs.append(F.interpolate(y, size=(h, w), mode="bilinear", align_corners=False))
        return outs


class UPerNetDecoder(nn.Module):
    """Pyramid pooling on the top level plus top-down fusion to stride 4."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.in_channels = cfg.backbone_channels
        ch = cfg.decoder_channels
        # replicate padding keeps a spatially constant input constant through the 3x3 convs
        self.psp = PyramidPooling(self.in_channels[-1], ch, cfg.psp_bin_sizes, cfg)
        self.psp_bottleneck = _conv_norm_act(
            self.in_channels[-1] + len(cfg.psp_bin_sizes) * ch, ch, cfg, padding_mode="replicate"
        )
        self.laterals = nn.ModuleList(
            _conv_norm_act(cin, ch, cfg, kernel=1) for cin in self.in_channels[:-1]
        )
        self.fpn_convs = nn.ModuleList(
            _conv_norm_act(ch, ch, cfg, padding_mode="replicate") for _ in self.in_channels[:-1]
        )
        self.fusion = _conv_norm_act(len(self.in_channels) * ch, ch, cfg, padding_mode="replicate")

    def forward(self, levels: tuple[torch.Tensor, ...]) -> torch.Tensor:
        if len(levels) != len(self.in_channels):
            raise ValueError(f"expected {len(self.in_channels)} pyramid levels, got {len(levels)}")
        for lvl, expect in zip(levels, self.in_channels):
            if lvl.shape[1] != expect:
                raise ValueError(f"pyramid channel mismatch: got {lvl.shape[1]}, config says {expect}")

        top = torch.cat([levels[-1], *self.psp(levels[-1])], dim=1)
        laterals = [conv(lvl) for conv, lvl in zip(self.laterals, levels[:-1])]
        laterals.append(self.psp_bottleneck(top))
        for i in range(len(laterals) - 1, 0, -1):
            size = laterals[i - 1].shape[-2:]
            laterals[i - 1] = laterals[i - 1] + F.interpolate(
                laterals[i], size=size, mode="bilinear", align_corners=False
            )

        outs = [conv(lat) for conv, lat in zip(self.fpn_convs, laterals[:-1])]
        outs.append(laterals[-1])
        size = outs[0].shape[-2:]
        outs = [outs[0]] + [
            F.interpolate(o, size=size, mode="bilinear", align_corners=False) for o in outs[1:]
        ]
        return self.fusion(torch.cat(outs, dim=1))


class SegmentationModel(nn.Module):
    """Backbone -> decoder -> 9-logit head, bilinearly upsampled to input size."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = PyramidBackbone(cfg)
        self.decoder = UPerNetDecoder(cfg)
        self.head = nn.Conv2d(cfg.decoder_channels, cfg.num_classes, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        levels = self.backbone(x)
        fused = self.decoder(levels)
        logits = self.head(fused)
        return F.interpolate(logits, size=x.shape[-2:], mode="bilinear", align_corners=False)


def build_model(cfg: ModelConfig, seed: int | None = None) -> SegmentationModel:
    if seed is not None:
        torch.manual_seed(seed)
    return SegmentationModel(cfg)


def normalize_images(imgs: np.ndarray, cfg: ModelConfig, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """8-bit (N,H,W,3) or (H,W,3) rasters -> normalized (N,3,H,W) tensor."""
    arr = np.asarray(imgs)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected (N,H,W,3) or (H,W,3) image array, got {arr.shape}")
    if not arr.flags.writeable:
        arr = arr.copy()
    x = torch.from_numpy(np.ascontiguousarray(arr)).to(dtype) / 255.0
    mean = torch.tensor(cfg.input_mean, dtype=dtype).view(1, 1, 1, 3)
    std = torch.tensor(cfg.input_std, dtype=dtype).view(1, 1, 1, 3)
    return ((x - mean) / std).permute(0, 3, 1, 2).contiguous()


def cross_entropy_loss(logits: torch.Tensor, labels: torch.Tensor, ignore_id: int = IGNORE_ID) -> torch.Tensor:
    """Mean of -log softmax(logits)[label] over pixels whose label is not ignored.

    With every pixel ignored the loss is a defined 0 (still attached to the
    graph) and an EmptyLossWarning is emitted.
    """
    if logits.dim() == 3:
        logits = logits[None]
    if labels.dim() == 2:
        labels = labels[None]
    if logits.shape[0] != labels.shape[0] or logits.shape[-2:] != labels.shape[-2:]:
        raise ValueError(f"logits {tuple(logits.shape)} and labels {tuple(labels.shape)} disagree")
    labels = labels.long()
    valid = labels != ignore_id
    out_of_range = valid & ((labels < 0) | (labels >= logits.shape[1]))
    if out_of_range.any():
        bad = torch.unique(labels[out_of_range])
        raise ValueError(f"labels outside 0..{logits.shape[1] - 1} and not ignore: {bad.tolist()}")
    n_valid = int(valid.sum())
    if n_valid == 0:
        warnings.warn("all pixels ignored; loss defined as 0", EmptyLossWarning)
        return logits.sum() * 0.0
    logp = F.log_softmax(logits, dim=1)
    picked = logp.gather(1, torch.where(valid, labels, 0).unsqueeze(1)).squeeze(1)
    return -picked[valid].sum() / n_valid
