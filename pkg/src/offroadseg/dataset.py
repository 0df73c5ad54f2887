"""Dataset indexing (images/labels paired by stem), raster IO, synthetic data."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .rng import RngStream
from .taxonomy import DEFAULT_PALETTE, IGNORE_ID

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class DatasetError(ValueError):
    """Structural problems: missing directories, unpaired stems."""


@dataclass(frozen=True)
class Sample:
    stem: str
    image_path: Path
    label_path: Path


def load_dataset(roots, *, require_labels: bool = True) -> list[Sample]:
    """Index one or more `<root>/images` + `<root>/labels` trees.

    Roots are concatenated in the given order; within a root samples sort
    lexicographically by stem, so the index is stable across runs and hosts.
    """
    if isinstance(roots, (str, Path)):
        roots = [roots]
    if not roots:
        raise DatasetError("no dataset roots given")
    samples: list[Sample] = []
    for root in roots:
        root = Path(root)
        img_dir, lbl_dir = root / "images", root / "labels"
        if not img_dir.is_dir():
            raise DatasetError(f"missing image directory {img_dir}")
        if require_labels and not lbl_dir.is_dir():
            raise DatasetError(f"missing label directory {lbl_dir}")
        by_stem: dict[str, Path] = {}
        for p in sorted(img_dir.iterdir()):
            if p.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            if p.stem in by_stem:
                raise DatasetError(f"duplicate image stem {p.stem!r} under {img_dir}")
            by_stem[p.stem] = p
        if not by_stem:
            raise DatasetError(f"no images under {img_dir}")
        label_stems = (
            {p.stem for p in lbl_dir.iterdir() if p.suffix.lower() == ".png"} if lbl_dir.is_dir() else set()
        )
        for stem in sorted(by_stem):
            label_path = lbl_dir / f"{stem}.png"
            if require_labels and not label_path.is_file():
                raise DatasetError(f"image stem {stem!r} has no label under {lbl_dir}")
            samples.append(Sample(stem=stem, image_path=by_stem[stem], label_path=label_path))
        orphans = label_stems - set(by_stem)
        if require_labels and orphans:
            raise DatasetError(f"label stem {sorted(orphans)[0]!r} has no image under {img_dir}")
    return samples


def read_image(path: str | Path) -> np.ndarray:
    """8-bit RGB raster, HxWx3."""
    with Image.open(path) as im:
        return np.array(im.convert("RGB"), dtype=np.uint8)


def read_label_map(path: str | Path) -> np.ndarray:
    """Single-channel 8-bit class-id raster, HxW."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise OSError(f"label raster {path} must be single-channel, got shape {arr.shape}")
    return arr.astype(np.uint8)


def save_label_map(path: str | Path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"label raster must be HxW, got shape {labels.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path)


def save_image(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must be HxWx3, got shape {img.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img.astype(np.uint8), mode="RGB").save(path)


def colorize_labels(labels: np.ndarray, palette=DEFAULT_PALETTE,
                    ignore_color: tuple[int, int, int] = (0, 0, 0)) -> np.ndarray:
    """Class-id raster to RGB using the palette; ignore pixels get ignore_color."""
    labels = np.asarray(labels)
    lut = np.zeros((256, 3), dtype=np.uint8)
    lut[IGNORE_ID] = ignore_color
    for i, color in enumerate(palette):
        lut[i] = color
    return lut[labels.astype(np.int64)]


# Class ids used by the synthetic scenes; colors track the palette so the
# segmentation task is learnable from color alone.
_SYNTH_BG, _SYNTH_BOX, _SYNTH_DISK = 3, 1, 6


def synthetic_scene(index: int, size: tuple[int, int] = (64, 64), seed: int = 0,
                    noise: float = 8.0) -> tuple[np.ndarray, np.ndarray]:
    """One (image, labels) pair: textured background, a rectangle and a disk."""
    h, w = size
    rng = RngStream.derive(seed, 3, index)
    labels = np.full((h, w), _SYNTH_BG, dtype=np.uint8)

    bh, bw = rng.randint(h // 4, h // 2), rng.randint(w // 4, w // 2)
    top, left = rng.randint(0, h - bh), rng.randint(0, w - bw)
    labels[top : top + bh, left : left + bw] = _SYNTH_BOX

    r = rng.randint(min(h, w) // 8, min(h, w) // 4)
    cy, cx = rng.randint(r, h - 1 - r), rng.randint(r, w - 1 - r)
    yy, xx = np.mgrid[0:h, 0:w]
    labels[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = _SYNTH_DISK

    img = np.empty((h, w, 3), dtype=np.float64)
    for cls in (_SYNTH_BG, _SYNTH_BOX, _SYNTH_DISK):
        img[labels == cls] = DEFAULT_PALETTE[cls]
    img += rng.uniform_array(-noise, noise, (h, w, 3))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), labels


def make_synthetic_dataset(root: str | Path, count: int = 4, size: tuple[int, int] = (64, 64),
                           seed: int = 0, noise: float = 8.0) -> list[Sample]:
    """Write a small on-disk dataset in the standard layout and index it."""
    root = Path(root)
    for i in range(count):
        img, labels = synthetic_scene(i, size=size, seed=seed, noise=noise)
        save_image(root / "images" / f"synth_{i:03d}.png", img)
        save_label_map(root / "labels" / f"synth_{i:03d}.png", labels)
    return load_dataset(root)
