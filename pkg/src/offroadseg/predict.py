"""Inference: checkpoint loading, padded forward pass, argmax label maps."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError, load_checkpoint
from .config import PipelineConfig, config_from_dict
from .dataset import IMAGE_SUFFIXES, colorize_labels, read_image, save_image, save_label_map
from .model import SegmentationModel, build_model, normalize_images


def labels_from_logits(logits: torch.Tensor) -> np.ndarray:
    """Argmax over the channel axis; accepts (C,H,W) or (N,C,H,W)."""
    if logits.dim() == 3:
        logits = logits.unsqueeze(0)
    if logits.dim() != 4:
        raise ValueError(f"expected (N,C,H,W) logits, got shape {tuple(logits.shape)}")
    out = logits.argmax(dim=1).to(torch.uint8).cpu().numpy()
    return out[0] if out.shape[0] == 1 else out


def pad_to_multiple(img: np.ndarray, multiple: int = 32, pad_value: int = 0) -> tuple[np.ndarray, tuple[int, int]]:
    """Bottom/right pad so both dims divide `multiple`; returns (padded, orig hw)."""
    h, w = img.shape[:2]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph == 0 and pw == 0:
        return img, (h, w)
    widths = ((0, ph), (0, pw)) + ((0, 0),) * (img.ndim - 2)
    return np.pad(img, widths, mode="constant", constant_values=pad_value), (h, w)


def predict_array(model: SegmentationModel, img: np.ndarray, pad_value: int = 0) -> np.ndarray:
    """Label map for one 8-bit RGB image; pads to /32 and crops the output back."""
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"expected HxWx3 uint8 image, got shape {img.shape} dtype {img.dtype}")
    padded, (h, w) = pad_to_multiple(img, 32, pad_value)
    model.eval()
    with torch.no_grad():
        logits = model(normalize_images(padded[None], model.cfg))
    return labels_from_logits(logits)[:h, :w]


def load_model_for_inference(checkpoint_path: str | Path, use_ema: bool = False) -> tuple[SegmentationModel, PipelineConfig]:
    """Rebuild the model a checkpoint was trained with and load its weights.

    With use_ema the trainable parameters come from the averaged shadow copy;
    buffers always come from the live model state.
    """
    tensors, meta = load_checkpoint(checkpoint_path)
    if "config" not in meta:
        raise CheckpointError(f"{checkpoint_path}: missing config echo in metadata")
    cfg = config_from_dict(meta["config"])
    model = build_model(cfg.model)
    state = {k[len("model/") :]: v for k, v in tensors.items() if k.startswith("model/")}
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise CheckpointError(f"{checkpoint_path}: missing model tensors {sorted(missing)[:3]}")
    model.load_state_dict(state)
    if use_ema:
        shadow = {k[len("ema/") :]: v for k, v in tensors.items() if k.startswith("ema/")}
        if not shadow:
            raise CheckpointError(f"{checkpoint_path}: no averaged weights stored")
        with torch.no_grad():
            for name, param in model.named_parameters():
                if name not in shadow:
                    raise CheckpointError(f"{checkpoint_path}: averaged weights lack {name!r}")
                param.copy_(shadow[name].to(param.dtype))
    model.eval()
    return model, cfg


def predict_directory(model: SegmentationModel, input_dir: str | Path, output_dir: str | Path,
                      palette=None, pad_value: int = 0, colorized: bool = True) -> list[Path]:
    """Write `<stem>.png` id masks (and `<stem>_color.png`) for every image."""
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    if not input_dir.is_dir():
        raise ValueError(f"input directory not found: {input_dir}")
    images = sorted(p for p in input_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not images:
        raise ValueError(f"no images under {input_dir}")
    written: list[Path] = []
    for path in images:
        labels = predict_array(model, read_image(path), pad_value=pad_value)
        out = output_dir / f"{path.stem}.png"
        save_label_map(out, labels)
        written.append(out)
        if colorized:
            color = output_dir / f"{path.stem}_color.png"
            save_image(color, colorize_labels(labels, palette) if palette else colorize_labels(labels))
            written.append(color)
    return written
