"""The training loop: seeded sampling, augmentation, optimization, EMA, checkpoints."""

from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import geometric_pipeline, photometric_distortion
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PipelineConfig, config_to_dict, resolve_mapping
from .dataset import Sample, load_dataset, read_image, read_label_map
from .evaluation import EvalReport, evaluate_dataset
from .model import SegmentationModel, build_model, cross_entropy_loss, normalize_images
from .optim import AdamW, EmaTracker, NonFiniteGradientError, poly_lr
from .rng import RngStream
from .taxonomy import remap

# Stream-derivation domains; changing these renumbers every random draw.
AUG_DOMAIN = 1
SHUFFLE_DOMAIN = 2


class TrainingDivergedError(RuntimeError):
    """Non-finite loss or gradients; carries the iteration for diagnostics."""


@dataclass
class RunManifest:
    config: dict
    start_iteration: int
    end_iteration: int
    metric_history: list[dict] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    final_loss: float | None = None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "start_iteration": self.start_iteration,
            "end_iteration": self.end_iteration,
            "metric_history": self.metric_history,
            "checkpoints": self.checkpoints,
            "final_loss": self.final_loss,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def sample_index_for_position(position: int, n_samples: int, seed: int) -> int:
    """Deterministic shuffled-epoch order: position -> dataset index."""
    if n_samples <= 0:
        raise ValueError("empty dataset")
    epoch, offset = divmod(position, n_samples)
    perm = RngStream.derive(seed, SHUFFLE_DOMAIN, epoch).permutation(n_samples)
    return int(perm[offset])


def load_training_pair(sample: Sample, cfg: PipelineConfig, mapping) -> tuple[np.ndarray, np.ndarray]:
    img = read_image(sample.image_path)
    labels = read_label_map(sample.label_path)
    if img.shape[:2] != labels.shape:
        raise ValueError(f"sample {sample.stem}: image {img.shape[:2]} and label {labels.shape} sizes differ")
    if mapping is not None:
        labels = remap(labels, mapping)
    return img, labels


def augmented_sample(sample: Sample, position: int, cfg: PipelineConfig, mapping) -> tuple[np.ndarray, np.ndarray]:
    """Geometric then photometric augmentation, keyed by global sample position.

    Keying the stream by position (not worker or batch slot) makes the result
    independent of batch size and accumulation layout.
    """
    img, labels = load_training_pair(sample, cfg, mapping)
    rng = RngStream.derive(cfg.train.seed, AUG_DOMAIN, position)
    img, labels = geometric_pipeline(img, labels, cfg.augment.geometric, rng)
    img = photometric_distortion(img, cfg.augment.photometric, rng)
    return img, labels


def _micro_batch(samples: list[Sample], positions: list[int], cfg: PipelineConfig, mapping) -> tuple[np.ndarray, np.ndarray]:
    imgs, lbls = [], []
    for pos in positions:
        idx = sample_index_for_position(pos, len(samples), cfg.train.seed)
        img, lab = augmented_sample(samples[idx], pos, cfg, mapping)
        imgs.append(img)
        lbls.append(lab)
    return np.stack(imgs), np.stack(lbls)


def build_eval_model(cfg: PipelineConfig, live: SegmentationModel, ema: EmaTracker) -> SegmentationModel:
    """Fresh model carrying the EMA shadow parameters (buffers from the live model)."""
    eval_model = build_model(cfg.model)
    state = {k: v.detach().clone() for k, v in live.state_dict().items()}
    for name, tensor in ema.snapshot().items():
        state[name] = tensor.to(state[name].dtype)
    eval_model.load_state_dict(state)
    eval_model.eval()
    return eval_model


def validate_with_ema(cfg: PipelineConfig, live: SegmentationModel, ema: EmaTracker,
                      val_samples: list[Sample], mapping) -> EvalReport:
    """Every recorded validation goes through here, on an EMA snapshot."""
    eval_model = build_eval_model(cfg, live, ema)
    return evaluate_dataset(
        eval_model,
        val_samples,
        mapping=mapping,
        model_id=f"ema@{ema.updates}",
        pad_value=cfg.augment.geometric.image_pad_value,
    )


def checkpoint_tensors(model: SegmentationModel, optimizer: AdamW, ema: EmaTracker) -> dict[str, torch.Tensor]:
    tensors: dict[str, torch.Tensor] = {}
    for name, t in model.state_dict().items():
        tensors[f"model/{name}"] = t
    for name, t in optimizer.exp_avg.items():
        tensors[f"optim/exp_avg/{name}"] = t
    for name, t in optimizer.exp_avg_sq.items():
        tensors[f"optim/exp_avg_sq/{name}"] = t
    for name, t in ema.shadow.items():
        tensors[f"ema/{name}"] = t
    return tensors


def save_training_checkpoint(path: str | Path, iteration: int, cfg: PipelineConfig,
                             model: SegmentationModel, optimizer: AdamW, ema: EmaTracker) -> None:
    meta = {
        "iteration": iteration,
        "optim_step_count": optimizer.step_count,
        "ema_updates": ema.updates,
        "ema_decay": ema.decay,
        "config": config_to_dict(cfg),
    }
    save_checkpoint(path, checkpoint_tensors(model, optimizer, ema), meta)


def _config_echo_for_resume(tree: dict) -> dict:
    tree = copy.deepcopy(tree)
    tree.get("train", {}).pop("output_dir", None)
    return tree


def train(cfg: PipelineConfig, resume: str | Path | None = None) -> RunManifest:
    """Run the full loop and leave manifest, metrics, curves and checkpoints on disk."""
    out_dir = Path(cfg.train.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    mapping = resolve_mapping(cfg.data)
    train_samples = load_dataset(cfg.data.train_roots)
    val_samples = load_dataset(cfg.data.val_roots) if cfg.data.val_roots else []

    torch.manual_seed(cfg.train.seed)
    model = build_model(cfg.model, seed=cfg.train.seed)
    model.train()
    optimizer = AdamW(model.named_parameters(), cfg.optim)
    ema = EmaTracker(model.named_parameters(), decay=cfg.ema.decay)

    start_iter = 0
    if resume is not None:
        tensors, meta = load_checkpoint(resume)
        if _config_echo_for_resume(meta["config"]) != _config_echo_for_resume(config_to_dict(cfg)):
            raise ValueError(f"resume config mismatch: checkpoint {resume} was written with different settings")
        model.load_state_dict({k[len("model/") :]: v for k, v in tensors.items() if k.startswith("model/")})
        optimizer.load_state_dict(
            {
                "step_count": meta["optim_step_count"],
                "exp_avg": {k[len("optim/exp_avg/") :]: v for k, v in tensors.items()
                            if k.startswith("optim/exp_avg/")},
                "exp_avg_sq": {k[len("optim/exp_avg_sq/") :]: v for k, v in tensors.items()
                               if k.startswith("optim/exp_avg_sq/")},
            }
        )
        ema.load_state_dict(
            {
                "decay": meta["ema_decay"],
                "updates": meta["ema_updates"],
                "shadow": {k[len("ema/") :]: v for k, v in tensors.items() if k.startswith("ema/")},
            }
        )
        start_iter = int(meta["iteration"])

    total_iters = cfg.schedule.total_iters
    if start_iter > total_iters:
        raise ValueError(f"checkpoint iteration {start_iter} is beyond total_iters {total_iters}")

    manifest = RunManifest(config=config_to_dict(cfg), start_iteration=start_iter, end_iteration=start_iter)
    metrics_rows: list[dict] = []
    params = dict(model.named_parameters())
    micro = cfg.train.batch_size
    accum = cfg.train.grad_accum_steps
    effective = micro * accum

    def persist(iteration: int) -> None:
        path = ckpt_dir / f"checkpoint_{iteration:06d}.ckpt"
        save_training_checkpoint(path, iteration, cfg, model, optimizer, ema)
        if str(path) not in manifest.checkpoints:
            manifest.checkpoints.append(str(path))

    if start_iter == 0:
        persist(0)

    for t in range(start_iter, total_iters):
        lr = poly_lr(t, cfg.schedule)
        optimizer.zero_grad()
        loss_value = 0.0
        for k in range(accum):
            base = t * effective + k * micro
            imgs, lbls = _micro_batch(train_samples, list(range(base, base + micro)), cfg, mapping)
            x = normalize_images(imgs, cfg.model)
            logits = model(x)
            loss = cross_entropy_loss(logits, torch.from_numpy(lbls.astype(np.int64)))
            (loss / accum).backward()
            loss_value += float(loss.detach()) / accum
        if not math.isfinite(loss_value):
            raise TrainingDivergedError(f"non-finite loss {loss_value} at iteration {t}")
        try:
            optimizer.step(lr)
        except NonFiniteGradientError as exc:
            raise TrainingDivergedError(f"iteration {t}: {exc}") from exc
        ema.update(params)

        iteration = t + 1
        row: dict = {"iteration": iteration, "loss": loss_value, "lr": lr, "val_miou": None}
        if val_samples and (iteration % cfg.train.eval_interval == 0 or iteration == total_iters):
            report = validate_with_ema(cfg, model, ema, val_samples, mapping)
            row["val_miou"] = report.miou
            manifest.metric_history.append({"iteration": iteration, "miou": report.miou})
        metrics_rows.append(row)
        manifest.final_loss = loss_value
        manifest.end_iteration = iteration
        if iteration % cfg.train.checkpoint_interval == 0 or iteration == total_iters:
            persist(iteration)

    _write_metrics_csv(out_dir / "metrics.csv", metrics_rows)
    if metrics_rows:
        from .figures import save_training_curves

        save_training_curves(metrics_rows, out_dir / "training_curves.png")
    manifest.save(out_dir / "manifest.json")
    return manifest


def _write_metrics_csv(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "lr", "val_miou"])
        for r in rows:
            writer.writerow(
                [r["iteration"], f"{r['loss']:.8f}", f"{r['lr']:.10g}",
                 "" if r["val_miou"] is None else f"{r['val_miou']:.6f}"]
            )
