"""The 9-class challenge taxonomy and the raw-64-to-9 label remapping."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

# Fixed report order; every table and report row follows it.
CLASS_NAMES = (
    "Other",
    "Artificial Structure",
    "Artificial Ground",
    "Natural Ground",
    "Obstacle",
    "Vehicle",
    "Vegetation",
    "Human",
    "Sky",
)
NUM_CLASSES = 9
NUM_RAW_CLASSES = 64
IGNORE_ID = 255

# Colorized-mask palette, one RGB triple per class in CLASS_NAMES order.
DEFAULT_PALETTE = (
    (110, 110, 110),  # Other
    (70, 70, 70),     # Artificial Structure
    (128, 64, 128),   # Artificial Ground
    (152, 251, 152),  # Natural Ground
    (255, 140, 0),    # Obstacle
    (0, 0, 142),      # Vehicle
    (107, 142, 35),   # Vegetation
    (220, 20, 60),    # Human
    (70, 130, 180),   # Sky
)


class MappingError(ValueError):
    """Raised for unreadable or inconsistent remapping tables."""


class InvalidLabelError(ValueError):
    """Raised when a label raster contains ids outside the declared range."""


@dataclass(frozen=True)
class Taxonomy:
    classes: tuple[str, ...] = CLASS_NAMES
    ignore_id: int = IGNORE_ID

    def __post_init__(self):
        if len(self.classes) != NUM_CLASSES:
            raise ValueError(f"taxonomy must have exactly {NUM_CLASSES} classes, got {len(self.classes)}")
        if 0 <= self.ignore_id < NUM_CLASSES:
            raise ValueError(f"ignore_id {self.ignore_id} collides with class ids 0..{NUM_CLASSES - 1}")

    @property
    def num_classes(self) -> int:
        return len(self.classes)


CHALLENGE_TAXONOMY = Taxonomy()


@dataclass(frozen=True)
class LabelMapping:
    """Total map from raw ids 0..63 to challenge ids 0..8 or ignore.

    Raw ids not listed in the source table fall back to ignore; that fail-safe
    is part of the contract, not an error.
    """

    entries: dict[int, int] = field(repr=False)
    ignore_id: int = IGNORE_ID

    def __post_init__(self):
        for raw, target in self.entries.items():
            if not 0 <= raw < NUM_RAW_CLASSES:
                raise MappingError(f"raw id {raw} outside 0..{NUM_RAW_CLASSES - 1}")
            if target != self.ignore_id and not 0 <= target < NUM_CLASSES:
                raise MappingError(f"target {target} for raw id {raw} outside 0..{NUM_CLASSES - 1} or ignore")

    @classmethod
    def identity(cls) -> "LabelMapping":
        """Maps already-remapped ids 0..8 to themselves."""
        return cls(entries={i: i for i in range(NUM_CLASSES)})

    @classmethod
    def from_entries(cls, entries: dict[int, int]) -> "LabelMapping":
        return cls(entries=dict(entries))

    def lookup_table(self) -> np.ndarray:
        """256-entry table: listed raw ids, ignore fallback elsewhere."""
        lut = np.full(256, self.ignore_id, dtype=np.uint8)
        for raw, target in self.entries.items():
            lut[raw] = target
        return lut

    def __call__(self, raw_id: int) -> int:
        return self.entries.get(int(raw_id), self.ignore_id)


def load_mapping(path: str | Path, ignore_id: int = IGNORE_ID) -> LabelMapping:
    """Load a two-column `raw_id,target_id` csv table into a LabelMapping."""
    path = Path(path)
    if not path.is_file():
        raise MappingError(f"mapping file not found: {path}")
    entries: dict[int, int] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MappingError(f"{path}: empty mapping file") from None
        if [c.strip() for c in header] != ["raw_id", "target_id"]:
            raise MappingError(f"{path}: expected header 'raw_id,target_id', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise MappingError(f"{path}:{lineno}: expected two columns, got {len(row)}")
            try:
                raw, target = int(row[0]), int(row[1])
            except ValueError:
                raise MappingError(f"{path}:{lineno}: non-integer row {row!r}") from None
            if not 0 <= raw < NUM_RAW_CLASSES:
                raise MappingError(f"{path}:{lineno}: raw id {raw} outside 0..{NUM_RAW_CLASSES - 1}")
            if target != ignore_id and not 0 <= target < NUM_CLASSES:
                raise MappingError(
                    f"{path}:{lineno}: target {target} outside 0..{NUM_CLASSES - 1} and not ignore ({ignore_id})"
                )
            if raw in entries:
                raise MappingError(f"{path}:{lineno}: duplicate raw id {raw}")
            entries[raw] = target
    return LabelMapping(entries=entries, ignore_id=ignore_id)


def default_mapping_path() -> Path:
    """Packaged default table (see docs/goose_label_mapping.md for provenance)."""
    return Path(str(resources.files("offroadseg").joinpath("data/goose_remap_9cat_v1.csv")))


def remap(labels: np.ndarray, mapping: LabelMapping) -> np.ndarray:
    """Elementwise raw-to-challenge lookup; ignore pixels pass through."""
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise InvalidLabelError(f"label raster must be integer, got {labels.dtype}")
    invalid = (labels < 0) | ((labels >= NUM_RAW_CLASSES) & (labels != mapping.ignore_id))
    if invalid.any():
        bad = np.unique(labels[invalid])
        raise InvalidLabelError(f"raw ids outside 0..{NUM_RAW_CLASSES - 1}: {bad.tolist()}")
    return mapping.lookup_table()[labels.astype(np.int64)]


def class_histogram(labels: np.ndarray) -> dict[int, int]:
    """Pixel count per class id present in the raster (ignore included)."""
    values, counts = np.unique(np.asarray(labels), return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}
