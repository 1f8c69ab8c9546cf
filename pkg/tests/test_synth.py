from __future__ import annotations

import pytest

from crossview_afford.dataset import load_image, load_manifest, select
from crossview_afford.errors import ConfigError
from crossview_afford.ftm import read_tensor
from crossview_afford.synth import MANIFEST_NAME, SEEN_SHAPES, UNSEEN_SHAPES, generate_synthetic


def test_counts(tmp_path):
    records = load_manifest(generate_synthetic(tmp_path, n_classes=3, n_ego=20, n_exo_per_class=30, seed=1, image_size=16))
    assert len(select(records, role="egocentric")) == 20 * 3
    assert len(select(records, role="exocentric")) == 30 * 3
    assert len(select(records, role="egocentric", split="test")) == (20 // 3) * 3


def test_same_seed_same_bytes(tmp_path):
    a = generate_synthetic(tmp_path / "a", 2, 4, 2, seed=5, image_size=16).parent
    b = generate_synthetic(tmp_path / "b", 2, 4, 2, seed=5, image_size=16).parent
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert all((a / f).read_bytes() == (b / f).read_bytes() for f in files)


def test_different_seed_changes_images(tmp_path):
    a = generate_synthetic(tmp_path / "a", 1, 1, 1, seed=1, image_size=16).parent
    b = generate_synthetic(tmp_path / "b", 1, 1, 1, seed=2, image_size=16).parent
    image = "images/grasp_ego_000.png"
    assert (a / image).read_bytes() != (b / image).read_bytes()


def test_ground_truth_and_partitions(tiny_dataset):
    records = load_manifest(tiny_dataset)
    for record in select(records, role="egocentric", split="test"):
        gt = read_tensor(record.gt_heatmap_path)
        assert gt.shape == (16, 16)
        assert gt.sum() == pytest.approx(1.0, abs=1e-5)
        assert record.scale is not None
    for record in records:
        shapes = UNSEEN_SHAPES if record.seen_partition == "unseen" else SEEN_SHAPES
        assert record.object in shapes
        assert load_image(record.image_path).shape == (3, 16, 16)
    assert tiny_dataset.name == MANIFEST_NAME


def test_unseen_partition_alternates(tmp_path):
    records = load_manifest(generate_synthetic(tmp_path, 1, 6, 1, seed=0, image_size=16))
    tests = select(records, role="egocentric", split="test")
    assert [r.seen_partition for r in tests] == ["seen", "unseen"]


@pytest.mark.parametrize("kwargs", [dict(n_classes=0), dict(n_ego=0), dict(image_size=8)])
def test_invalid_arguments(tmp_path, kwargs):
    args = dict(n_classes=1, n_ego=1, n_exo_per_class=1, seed=0, image_size=16) | kwargs
    with pytest.raises(ConfigError):
        generate_synthetic(tmp_path, **args)
