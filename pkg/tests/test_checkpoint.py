import pytest
import torch

from offroadseg.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


def sample_tensors():
    g = torch.Generator().manual_seed(4)
    return {
        "model/w": torch.randn(3, 4, generator=g),
        "model/b": torch.randn(4, generator=g, dtype=torch.float64),
        "optim/m": torch.zeros(2, dtype=torch.int64),
        "counts": torch.arange(6, dtype=torch.uint8).reshape(2, 3),
    }


def test_round_trip_values_and_meta(tmp_path):
    path = tmp_path / "a.ckpt"
    tensors = sample_tensors()
    meta = {"iteration": 7, "config": {"lr": 6e-5, "name": "x"}}
    save_checkpoint(path, tensors, meta)
    loaded, got_meta = load_checkpoint(path)
    assert got_meta == meta
    assert set(loaded) == set(tensors)
    for k in tensors:
        assert loaded[k].dtype == tensors[k].dtype
        assert torch.equal(loaded[k], tensors[k]), k


def test_save_load_save_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    tensors = sample_tensors()
    meta = {"iteration": 3, "nested": {"k": [1, 2, 3]}}
    save_checkpoint(a, tensors, meta)
    loaded, loaded_meta = load_checkpoint(a)
    save_checkpoint(b, loaded, loaded_meta)
    assert a.read_bytes() == b.read_bytes()


def test_same_content_same_bytes_regardless_of_dict_order(tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    tensors = sample_tensors()
    reversed_tensors = dict(reversed(list(tensors.items())))
    save_checkpoint(a, tensors, {"x": 1, "y": 2})
    save_checkpoint(b, reversed_tensors, {"y": 2, "x": 1})
    assert a.read_bytes() == b.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "a.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\0" * 32)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, sample_tensors(), {})
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(CheckpointError, match="cannot read"):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_non_tensor_entry_rejected(tmp_path):
    with pytest.raises(CheckpointError, match="not a tensor"):
        save_checkpoint(tmp_path / "a.ckpt", {"x": [1, 2, 3]}, {})


def test_non_json_meta_rejected(tmp_path):
    with pytest.raises(CheckpointError, match="JSON"):
        save_checkpoint(tmp_path / "a.ckpt", {}, {"bad": object()})


def test_empty_tensor_dict_round_trips(tmp_path):
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, {}, {"only": "meta"})
    tensors, meta = load_checkpoint(path)
    assert tensors == {} and meta == {"only": "meta"}


def test_bool_and_half_dtypes(tmp_path):
    path = tmp_path / "a.ckpt"
    tensors = {
        "flags": torch.tensor([True, False, True]),
        "half": torch.randn(3, dtype=torch.float16),
        "i16": torch.tensor([1, -2, 3], dtype=torch.int16),
    }
    save_checkpoint(path, tensors, {})
    loaded, _ = load_checkpoint(path)
    for k in tensors:
        assert loaded[k].dtype == tensors[k].dtype and torch.equal(loaded[k], tensors[k])
