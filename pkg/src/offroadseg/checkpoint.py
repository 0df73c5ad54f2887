"""Flat binary checkpoint container with deterministic bytes.

Layout: 8-byte magic, uint64 little-endian header length, a JSON header with
sorted keys, then the raw little-endian tensor payloads concatenated in
sorted-name order. Writing the same tensors and metadata twice produces the
same file, byte for byte, which is what the round-trip guarantees lean on.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np
import torch

MAGIC = b"ORSCKPT1"
FORMAT_VERSION = 1

_DTYPES: dict[str, tuple[torch.dtype, str]] = {
    "float16": (torch.float16, "<f2"),
    "float32": (torch.float32, "<f4"),
    "float64": (torch.float64, "<f8"),
    "int8": (torch.int8, "|i1"),
    "int16": (torch.int16, "<i2"),
    "int32": (torch.int32, "<i4"),
    "int64": (torch.int64, "<i8"),
    "uint8": (torch.uint8, "|u1"),
    "bool": (torch.bool, "|b1"),
}
_TORCH_TO_NAME = {td: name for name, (td, _) in _DTYPES.items()}


class CheckpointError(RuntimeError):
    pass


def _payload(t: torch.Tensor) -> tuple[str, bytes]:
    name = _TORCH_TO_NAME.get(t.dtype)
    if name is None:
        raise CheckpointError(f"unsupported tensor dtype {t.dtype}")
    arr = t.detach().cpu().contiguous().numpy()
    return name, arr.astype(_DTYPES[name][1], copy=False).tobytes()


def save_checkpoint(path: str | os.PathLike, tensors: dict[str, torch.Tensor], meta: dict) -> None:
    """Write tensors plus JSON-serializable metadata to one file."""
    entries: dict[str, dict] = {}
    blobs: list[bytes] = []
    offset = 0
    for key in sorted(tensors):
        t = tensors[key]
        if not isinstance(t, torch.Tensor):
            raise CheckpointError(f"entry {key!r} is not a tensor")
        dtype_name, blob = _payload(t)
        entries[key] = {
            "dtype": dtype_name,
            "shape": list(t.shape),
            "offset": offset,
            "nbytes": len(blob),
        }
        blobs.append(blob)
        offset += len(blob)
    header = {"format_version": FORMAT_VERSION, "meta": meta, "tensors": entries}
    try:
        header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"metadata is not JSON-serializable: {exc}") from exc
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, torch.Tensor], dict]:
    """Read a file written by save_checkpoint; returns (tensors, meta)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 8:
        raise CheckpointError(f"{path}: truncated header")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    (header_len,) = struct.unpack_from("<Q", raw, len(MAGIC))
    body_start = len(MAGIC) + 8 + header_len
    if len(raw) < body_start:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[len(MAGIC) + 8 : body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    tensors: dict[str, torch.Tensor] = {}
    for key, ent in header["tensors"].items():
        if ent["dtype"] not in _DTYPES:
            raise CheckpointError(f"{path}: entry {key!r} has unknown dtype {ent['dtype']}")
        torch_dtype, np_dtype = _DTYPES[ent["dtype"]]
        start = body_start + ent["offset"]
        end = start + ent["nbytes"]
        if end > len(raw):
            raise CheckpointError(f"{path}: entry {key!r} is truncated")
        arr = np.frombuffer(raw[start:end], dtype=np_dtype).reshape(ent["shape"])
        tensors[key] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True)).to(torch_dtype)
    return tensors, header["meta"]
