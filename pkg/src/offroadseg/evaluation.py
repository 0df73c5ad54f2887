"""Confusion-matrix accumulation, per-class IoU, and report rendering."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .taxonomy import CLASS_NAMES, IGNORE_ID, NUM_CLASSES, LabelMapping, remap


class ConfusionMatrix:
    """Square count matrix; rows are ground truth, columns prediction.

    Ignored pixels are never counted, so the total equals the number of
    evaluated pixels. Matrices merge by elementwise addition, which makes
    sharded evaluation bit-identical to a single pass.
    """

    def __init__(self, num_classes: int = NUM_CLASSES):
        if num_classes <= 0:
            raise ValueError(f"num_classes must be positive, got {num_classes}")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred: np.ndarray, gt: np.ndarray, ignore_id: int = IGNORE_ID) -> "ConfusionMatrix":
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"pred {pred.shape} and gt {gt.shape} must share a shape")
        k = self.num_classes
        if pred.size and ((pred < 0) | (pred >= k)).any():
            raise ValueError(f"prediction ids outside 0..{k - 1}")
        keep = gt != ignore_id
        if keep.any() and ((gt[keep] < 0) | (gt[keep] >= k)).any():
            raise ValueError(f"ground-truth ids outside 0..{k - 1} and not ignore")
        idx = gt[keep].astype(np.int64) * k + pred[keep].astype(np.int64)
        self.counts += np.bincount(idx, minlength=k * k).reshape(k, k)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge matrices of different sizes")
        self.counts += other.counts
        return self

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        out = ConfusionMatrix(self.num_classes)
        out.counts = self.counts + other.counts
        return out

    def total(self) -> int:
        return int(self.counts.sum())


def iou_from_confusion(cm: ConfusionMatrix) -> tuple[np.ndarray, float]:
    """Per-class IoU (NaN where the union is empty) and their mean.

    IoU_k = TP / (TP + FP + FN); classes absent from both prediction and
    ground truth are excluded from the mean rather than scored.
    """
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    union = tp + fp + fn
    per_class = np.full(cm.num_classes, np.nan)
    nonzero = union > 0
    per_class[nonzero] = tp[nonzero] / union[nonzero]
    return per_class, mean_iou(per_class)


def mean_iou(per_class) -> float:
    """Arithmetic mean over classes with a defined IoU (NaN/None excluded)."""
    vals = [v for v in per_class if v is not None and not math.isnan(v)]
    if not vals:
        return float("nan")
    return float(sum(vals) / len(vals))


@dataclass
class EvalReport:
    per_class_iou: list[float | None]
    miou: float
    evaluated_pixels: int
    images_evaluated: int
    images_skipped: int = 0
    model_id: str = ""
    class_names: tuple[str, ...] = CLASS_NAMES

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, *, images_evaluated: int,
                       images_skipped: int = 0, model_id: str = "") -> "EvalReport":
        per_class, miou = iou_from_confusion(cm)
        return cls(
            per_class_iou=[None if math.isnan(v) else float(v) for v in per_class],
            miou=miou,
            evaluated_pixels=cm.total(),
            images_evaluated=images_evaluated,
            images_skipped=images_skipped,
            model_id=model_id,
        )

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "per_class_iou": self.per_class_iou,
            "miou": None if math.isnan(self.miou) else self.miou,
            "evaluated_pixels": self.evaluated_pixels,
            "images_evaluated": self.images_evaluated,
            "images_skipped": self.images_skipped,
            "model_id": self.model_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            per_class_iou=list(d["per_class_iou"]),
            miou=float("nan") if d["miou"] is None else float(d["miou"]),
            evaluated_pixels=int(d["evaluated_pixels"]),
            images_evaluated=int(d["images_evaluated"]),
            images_skipped=int(d.get("images_skipped", 0)),
            model_id=str(d.get("model_id", "")),
            class_names=tuple(d.get("class_names", CLASS_NAMES)),
        )


def render_report(report: EvalReport, fmt: str = "markdown") -> str:
    """Render as a markdown table (percentages, 2 decimals) or as json."""
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if fmt != "markdown":
        raise ValueError(f"unknown report format {fmt!r}")

    def cell(v: float | None) -> str:
        return "n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{100.0 * v:.2f}"

    header = ["mIoU", *report.class_names]
    row = [cell(report.miou), *[cell(v) for v in report.per_class_iou]]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(" ---: " for _ in header) + "|",
        "| " + " | ".join(row) + " |",
        "",
        f"Evaluated {report.evaluated_pixels} pixels over {report.images_evaluated} images"
        + (f" ({report.images_skipped} skipped)" if report.images_skipped else "")
        + (f"; model: {report.model_id}" if report.model_id else "")
        + ".",
    ]
    return "\n".join(lines)


def report_csv(report: EvalReport) -> str:
    """Delimited companion to the rendered report: one class per row."""
    lines = ["class,iou"]
    for name, v in zip(report.class_names, report.per_class_iou):
        lines.append(f"{name},{'' if v is None else f'{100.0 * v:.4f}'}")
    lines.append(f"mIoU,{'' if math.isnan(report.miou) else f'{100.0 * report.miou:.4f}'}")
    return "\n".join(lines) + "\n"


def predict_labels(model, img: np.ndarray, pad_value: int = 0) -> np.ndarray:
    """Argmax label map for one 8-bit image, padding to a /32 size if needed."""
    from .predict import predict_array  # local import to avoid a cycle

    return predict_array(model, img, pad_value=pad_value)


def evaluate_dataset(
    model,
    samples,
    *,
    ignore_id: int = IGNORE_ID,
    mapping: LabelMapping | None = None,
    model_id: str = "",
    pad_value: int = 0,
) -> EvalReport:
    """Stream every sample through the model and fold into one confusion matrix.

    Unreadable samples are skipped with a warning and counted in the report.
    """
    from .dataset import read_image, read_label_map

    samples = list(samples)
    if not samples:
        raise ValueError("cannot evaluate an empty dataset")
    cm = ConfusionMatrix(NUM_CLASSES)
    evaluated = skipped = 0
    model.eval()
    with torch.no_grad():
        for sample in samples:
            try:
                img = read_image(sample.image_path)
                gt = read_label_map(sample.label_path)
            except OSError as exc:
                warnings.warn(f"skipping unreadable sample {sample.stem}: {exc}")
                skipped += 1
                continue
            if mapping is not None:
                gt = remap(gt, mapping)
            pred = predict_labels(model, img, pad_value=pad_value)
            cm.update(pred, gt, ignore_id=ignore_id)
            evaluated += 1
    if evaluated == 0:
        raise ValueError("no readable samples in the dataset")
    return EvalReport.from_confusion(cm, images_evaluated=evaluated, images_skipped=skipped, model_id=model_id)
