from pathlib import Path

import pytest

from offroadseg.config import parse_config
from offroadseg.dataset import make_synthetic_dataset
from offroadseg.train import train

REPO_ROOT = Path(__file__).resolve().parent.parent
TOY_CONFIG = REPO_ROOT / "configs" / "toy.yaml"


def toy_overrides(data_root: Path, out_dir: Path, *extra: str) -> list[str]:
    return [
        f"data.train_roots=['{data_root}']",
        "data.val_roots=[]",
        f"train.output_dir='{out_dir}'",
        *extra,
    ]


def make_toy_config(data_root: Path, out_dir: Path, *extra: str):
    return parse_config(TOY_CONFIG, toy_overrides(data_root, out_dir, *extra))


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("synth")
    make_synthetic_dataset(root, count=4, size=(64, 64), seed=0)
    return root


@pytest.fixture(scope="session")
def toy_run(synth_root, tmp_path_factory):
    """One full 300-iteration toy training run, shared across tests."""
    out_dir = tmp_path_factory.mktemp("toy_run")
    cfg = make_toy_config(synth_root, out_dir)
    manifest = train(cfg)
    return {
        "cfg": cfg,
        "manifest": manifest,
        "out_dir": out_dir,
        "data_root": synth_root,
        "checkpoint": manifest.checkpoints[-1],
        "initial_checkpoint": manifest.checkpoints[0],
    }
