"""Photometric color jitter and geometric scale-jitter/crop-pad augmentation.

Color transforms compute in float32 on 8-bit RGB rasters and round back, so a
transform configured as a no-op really is bit-exact identity. Labels are
categorical: they only ever see nearest-neighbour resampling and are never
color-transformed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from .rng import RngStream
from .taxonomy import IGNORE_ID

COLOR_KINDS = ("brightness", "contrast", "saturation", "hue")


@dataclass
class PhotometricConfig:
    """Per-transform apply probability and draw ranges (8-bit amounts, degrees for hue)."""

    p_apply: float = 0.5
    brightness_delta: float = 40.0
    contrast_range: tuple[float, float] = (0.7, 1.3)
    saturation_range: tuple[float, float] = (0.7, 1.3)
    hue_delta: float = 18.0

    def __post_init__(self):
        self.contrast_range = tuple(self.contrast_range)
        self.saturation_range = tuple(self.saturation_range)
        if not 0.0 <= self.p_apply <= 1.0:
            raise ValueError(f"p_apply must satisfy 0 <= p_apply <= 1, got {self.p_apply}")
        if self.brightness_delta < 0:
            raise ValueError(f"brightness_delta must be >= 0, got {self.brightness_delta}")
        for name, (lo, hi) in (("contrast_range", self.contrast_range), ("saturation_range", self.saturation_range)):
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        if not 0.0 <= self.hue_delta <= 180.0:
            raise ValueError(f"hue_delta must satisfy 0 <= hue_delta <= 180, got {self.hue_delta}")


@dataclass
class GeometricConfig:
    scale_range: tuple[float, float] = (0.5, 2.0)
    crop_size: tuple[int, int] = (512, 512)
    image_pad_value: int = 0
    label_pad_value: int = IGNORE_ID

    def __post_init__(self):
        self.scale_range = tuple(self.scale_range)
        self.crop_size = tuple(int(c) for c in self.crop_size)
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        if any(c <= 0 for c in self.crop_size):
            raise ValueError(f"crop_size dims must be positive, got {self.crop_size}")
        if not 0 <= self.image_pad_value <= 255:
            raise ValueError(f"image_pad_value must be an 8-bit intensity, got {self.image_pad_value}")
        if self.label_pad_value != IGNORE_ID:
            raise ValueError(f"label_pad_value must equal the ignore id {IGNORE_ID}, got {self.label_pad_value}")


def _check_image(img: np.ndarray) -> None:
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 uint8 image, got shape {img.shape} dtype {img.dtype}")


def _round_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def color_transform(img: np.ndarray, kind: str, amount: float) -> np.ndarray:
    """Apply a single color transform with the given amount.

    brightness adds, contrast multiplies, saturation scales S and hue rotates
    H in HSV space; all paths clamp back into [0, 255].
    """
    _check_image(img)
    if not math.isfinite(amount):
        raise ValueError(f"non-finite amount {amount!r} for {kind}")
    if kind == "brightness":
        return _round_u8(img.astype(np.float32) + np.float32(amount))
    if kind == "contrast":
        return _round_u8(img.astype(np.float32) * np.float32(amount))
    if kind in ("saturation", "hue"):
        hsv = cv2.cvtColor(img.astype(np.float32) / 255.0, cv2.COLOR_RGB2HSV)
        if kind == "saturation":
            hsv[..., 1] = np.clip(hsv[..., 1] * np.float32(amount), 0.0, 1.0)
        else:
            hsv[..., 0] = (hsv[..., 0] + np.float32(amount)) % np.float32(360.0)
        return _round_u8(cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB) * 255.0)
    raise ValueError(f"unknown color transform kind {kind!r}")


def sample_photometric_ops(cfg: PhotometricConfig, rng: RngStream) -> list[tuple[str, float]]:
    """Draw the (kind, amount) list for one image, in the fixed apply order.

    One Bernoulli draw per transform, then one amount draw only if it fires;
    that draw discipline is the reproducibility contract for a given stream.
    """
    ops: list[tuple[str, float]] = []
    if rng.bernoulli(cfg.p_apply):
        ops.append(("brightness", rng.uniform(-cfg.brightness_delta, cfg.brightness_delta)))
    if rng.bernoulli(cfg.p_apply):
        ops.append(("contrast", rng.uniform(*cfg.contrast_range)))
    if rng.bernoulli(cfg.p_apply):
        ops.append(("saturation", rng.uniform(*cfg.saturation_range)))
    if rng.bernoulli(cfg.p_apply):
        ops.append(("hue", rng.uniform(-cfg.hue_delta, cfg.hue_delta)))
    return ops


def photometric_distortion(img: np.ndarray, cfg: PhotometricConfig, rng: RngStream) -> np.ndarray:
    """Stochastically jitter brightness, contrast, saturation and hue."""
    _check_image(img)
    for kind, amount in sample_photometric_ops(cfg, rng):
        img = color_transform(img, kind, amount)
    return img


def geometric_pipeline(
    img: np.ndarray, labels: np.ndarray, cfg: GeometricConfig, rng: RngStream
) -> tuple[np.ndarray, np.ndarray]:
    """Random scale, then crop or bottom/right-pad both rasters to crop_size.

    Image and label stay pixel-aligned: one scale factor and one crop offset
    are drawn and applied to both.
    """
    _check_image(img)
    labels = np.asarray(labels)
    if img.shape[:2] != labels.shape[:2]:
        raise ValueError(f"image {img.shape[:2]} and labels {labels.shape[:2]} must share H, W")
    labels = labels.astype(np.uint8)

    s = rng.uniform(*cfg.scale_range)
    h, w = labels.shape[:2]
    nh, nw = max(1, int(round(s * h))), max(1, int(round(s * w)))
    img_r = cv2.resize(img, (nw, nh), interpolation=cv2.INTER_LINEAR)
    lab_r = cv2.resize(labels, (nw, nh), interpolation=cv2.INTER_NEAREST)

    ch, cw = cfg.crop_size
    top = rng.randint(0, max(nh - ch, 0))
    left = rng.randint(0, max(nw - cw, 0))
    img_c = img_r[top : top + ch, left : left + cw]
    lab_c = lab_r[top : top + ch, left : left + cw]

    out_img = np.full((ch, cw, 3), cfg.image_pad_value, dtype=np.uint8)
    out_lab = np.full((ch, cw), cfg.label_pad_value, dtype=np.uint8)
    out_img[: img_c.shape[0], : img_c.shape[1]] = img_c
    out_lab[: lab_c.shape[0], : lab_c.shape[1]] = lab_c
    return out_img, out_lab


def preview_grid(img: np.ndarray, cfg: PhotometricConfig, gutter: int = 4) -> np.ndarray:
    """Deterministic 3x3 panel grid showing the distortion at its extremes.

    Row-major order: original, combined(+), combined(-), brightness +/-,
    contrast x hi / x lo, saturation x hi / x lo. The top-left tile is the
    input, bit-exact.
    """
    _check_image(img)

    def combined(sign: int) -> np.ndarray:
        out = color_transform(img, "brightness", sign * cfg.brightness_delta)
        out = color_transform(out, "contrast", cfg.contrast_range[1] if sign > 0 else cfg.contrast_range[0])
        out = color_transform(out, "saturation", cfg.saturation_range[1] if sign > 0 else cfg.saturation_range[0])
        return color_transform(out, "hue", sign * cfg.hue_delta)

    tiles = [
        img,
        combined(+1),
        combined(-1),
        color_transform(img, "brightness", +cfg.brightness_delta),
        color_transform(img, "brightness", -cfg.brightness_delta),
        color_transform(img, "contrast", cfg.contrast_range[1]),
        color_transform(img, "contrast", cfg.contrast_range[0]),
        color_transform(img, "saturation", cfg.saturation_range[1]),
        color_transform(img, "saturation", cfg.saturation_range[0]),
    ]
    h, w = img.shape[:2]
    grid = np.full((3 * h + 2 * gutter, 3 * w + 2 * gutter, 3), 255, dtype=np.uint8)
    for i, tile in enumerate(tiles):
        r, c = divmod(i, 3)
        y, x = r * (h + gutter), c * (w + gutter)
        grid[y : y + h, x : x + w] = tile
    return grid
