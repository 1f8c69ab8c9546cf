from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from crossview_afford.config import TrainConfig, write_config
from crossview_afford.dataset import load_manifest
from crossview_afford.synth import generate_synthetic

TINY = {
    "profile": "toy",
    "seed": "3",
    "epochs": "1",
    "lr": "0.01",
    "batch_size": "2",
    "n_exo": "2",
    "rank": "2",
    "channels": "3",
    "nmf_iters": "2",
    "refine_iters": "2",
    "input_size": "16",
    "crop_source": "20",
    "stem_width": "4",
    "stage_widths": "4,4",
    "head_channels": "5",
}


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> TrainConfig:
    return TrainConfig.from_mapping(TINY)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """Two classes, three egocentric (one test) and two exocentric images each, 16×16."""
    out = tmp_path_factory.mktemp("tiny_synth")
    return generate_synthetic(out, n_classes=2, n_ego=3, n_exo_per_class=2, seed=0, image_size=16)


@pytest.fixture
def tiny_records(tiny_dataset: Path):
    return load_manifest(tiny_dataset)


@pytest.fixture
def tiny_config_file(tmp_path: Path) -> Path:
    return write_config(tmp_path / "tiny.txt", TINY)
