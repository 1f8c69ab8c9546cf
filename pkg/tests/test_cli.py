from __future__ import annotations

import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from crossview_afford.checkpoint import load_checkpoint
from crossview_afford.cli import main
from crossview_afford.config import RUN_CONFIG_NAME, TrainConfig, read_config
from crossview_afford.dataset import SampleRecord, dump_manifest
from crossview_afford.ftm import read_tensor, write_tensor
from crossview_afford.metrics import read_report
from crossview_afford.model import init_model
from crossview_afford.trainer import SGD, snap_model


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


def _eval_fixture(tmp_path, with_prediction=True):
    gt = np.random.default_rng(0).random((6, 6))
    gt /= gt.sum()
    gt_path = write_tensor(tmp_path / "gt" / "e1.ftm", gt)
    record = SampleRecord(
        id="e1", role="egocentric", affordance="cut", object="box", split="test", seen_partition="seen",
        image_path=str(tmp_path / "e1.png"), gt_heatmap_path=str(gt_path), attributes=("Middle",),
    )
    manifest = dump_manifest([record], tmp_path / "manifest.jsonl")
    heatmaps = tmp_path / "heatmaps"
    heatmaps.mkdir()
    if with_prediction:
        write_tensor(heatmaps / "e1.cut.ftm", gt)
    return manifest, heatmaps


def test_version(runner):
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0
    assert "cva" in result.output


def test_unknown_flag_is_a_usage_error(runner, tmp_path):
    result = runner.invoke(main, ["synth", "--out", str(tmp_path), "--bogus"])
    assert result.exit_code == 2
    assert "No such option" in result.output


def test_unknown_command(runner):
    assert runner.invoke(main, ["fly"]).exit_code == 2


def test_eval_identical_prediction(runner, tmp_path):
    manifest, heatmaps = _eval_fixture(tmp_path)
    result = runner.invoke(main, ["eval", str(manifest), str(heatmaps)])
    assert result.exit_code == 0, result.output
    assert "1.000" in result.output
    slices = read_report(heatmaps / "report.csv")
    assert slices["overall"]["sim"].mean == pytest.approx(1.0, abs=1e-9)
    assert (heatmaps / "per_image.csv").exists()


def test_eval_missing_prediction_exits_nonzero(runner, tmp_path):
    manifest, heatmaps = _eval_fixture(tmp_path, with_prediction=False)
    result = runner.invoke(main, ["eval", str(manifest), str(heatmaps), "--out", str(tmp_path / "out")])
    assert result.exit_code == 1
    assert "missing" in result.output
    assert (tmp_path / "out" / "report.csv").exists()


def test_report_renders_tables(runner, tmp_path):
    manifest, heatmaps = _eval_fixture(tmp_path)
    runner.invoke(main, ["eval", str(manifest), str(heatmaps)])
    result = runner.invoke(main, ["report", str(heatmaps / "report.csv")])
    assert result.exit_code == 0
    assert "class:cut" in result.output
    assert "scale:Middle" in result.output


def test_report_rejects_other_csv(runner, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n")
    result = runner.invoke(main, ["report", str(bad)])
    assert result.exit_code == 1
    assert "expected header" in result.output


def test_annotate(runner, tmp_path):
    annotations = tmp_path / "points.jsonl"
    annotations.write_text(json.dumps({"id": "img1", "width": 20, "height": 10, "points": [[4, 5]]}) + "\n")
    result = runner.invoke(main, ["annotate", str(annotations), "--out", str(tmp_path / "gt"), "--affordance", "cut"])
    assert result.exit_code == 0, result.output
    heatmap = read_tensor(tmp_path / "gt" / "img1.cut.ftm")
    assert heatmap.shape == (10, 20)
    assert (tmp_path / "gt" / "img1.cut.pgm").exists()
    assert "img1\t" in result.output


def test_synth(runner, tmp_path):
    result = runner.invoke(
        main, ["synth", "--out", str(tmp_path), "--classes", "2", "--ego", "3", "--exo", "1", "--image-size", "16"]
    )
    assert result.exit_code == 0, result.output
    assert (tmp_path / "manifest.jsonl").exists()


def test_train_zero_epochs_writes_the_initial_model(runner, tmp_path, tiny_dataset, tiny_config_file):
    out = tmp_path / "run"
    result = runner.invoke(
        main, ["train", str(tiny_dataset), "--out", str(out), "--config", str(tiny_config_file), "--epochs", "0"]
    )
    assert result.exit_code == 0, result.output

    effective = read_config(out / RUN_CONFIG_NAME)
    assert effective["epochs"] == "0"
    config = TrainConfig.from_mapping(effective)
    expected = init_model(config, ("cut", "grasp"))
    snap_model(expected, SGD(config.lr, config.sgd_momentum, config.weight_decay))
    arrays, meta = load_checkpoint(out / "checkpoint")
    assert meta["epoch"] == "0"
    for name, array in expected.to_arrays().items():
        assert np.array_equal(arrays[name], array), name


def test_flags_override_config_file(runner, tmp_path, tiny_dataset, tiny_config_file):
    out = tmp_path / "run"
    result = runner.invoke(
        main,
        ["train", str(tiny_dataset), "--out", str(out), "--config", str(tiny_config_file),
         "--epochs", "0", "--seed", "9", "--lambda2", "0.25"],
    )
    assert result.exit_code == 0, result.output
    effective = read_config(out / RUN_CONFIG_NAME)
    assert (effective["seed"], effective["lambda2"]) == ("9", "0.25")
    assert effective["rank"] == read_config(tiny_config_file)["rank"]


@pytest.mark.parametrize(
    "profile, lambda3, grad_clip",
    [("paper", "0.5", "0.0"), ("toy", "0.1", "5.0")],
)
def test_profile_flag_selects_the_defaults(
    runner, tmp_path, tiny_dataset, tiny_config_file, profile, lambda3, grad_clip
):
    out = tmp_path / "run"
    result = runner.invoke(
        main,
        ["train", str(tiny_dataset), "--out", str(out), "--config", str(tiny_config_file),
         "--epochs", "0", "--profile", profile],
    )
    assert result.exit_code == 0, result.output
    effective = read_config(out / RUN_CONFIG_NAME)
    assert (effective["profile"], effective["lambda3"], effective["grad_clip"]) == (profile, lambda3, grad_clip)
    assert effective["input_size"] == read_config(tiny_config_file)["input_size"]


def test_unknown_profile_is_a_usage_error(runner, tmp_path, tiny_dataset):
    result = runner.invoke(main, ["train", str(tiny_dataset), "--out", str(tmp_path), "--profile", "fullsize"])
    assert result.exit_code == 2


def test_train_sweep_uses_subdirectories(runner, tmp_path, tiny_dataset, tiny_config_file):
    out = tmp_path / "sweep"
    result = runner.invoke(
        main,
        ["train", str(tiny_dataset), "--out", str(out), "--config", str(tiny_config_file),
         "--epochs", "0", "--temperature", "0.5,2"],
    )
    assert result.exit_code == 0, result.output
    assert read_config(out / "T0.5" / RUN_CONFIG_NAME)["temperature"] == "0.5"
    assert read_config(out / "T2.0" / RUN_CONFIG_NAME)["temperature"] == "2.0"


def test_resume_cannot_sweep(runner, tmp_path, tiny_dataset):
    result = runner.invoke(
        main, ["train", str(tiny_dataset), "--out", str(tmp_path), "--rank", "2,4", "--resume", str(tmp_path)]
    )
    assert result.exit_code == 2


def test_invalid_config_value_exits_one(runner, tmp_path, tiny_dataset):
    result = runner.invoke(main, ["train", str(tiny_dataset), "--out", str(tmp_path), "--temperature", "0"])
    assert result.exit_code == 1
    assert "temperature" in result.output


def test_ground_single_image(runner, tmp_path, tiny_dataset, tiny_config_file):
    runner.invoke(
        main, ["train", str(tiny_dataset), "--out", str(tmp_path / "run"), "--config", str(tiny_config_file),
               "--epochs", "0"],
    )
    image = tiny_dataset.parent / "images" / "cut_ego_002.png"
    result = runner.invoke(
        main, ["ground", str(tmp_path / "run" / "checkpoint"), "--image", str(image), "--label", "cut",
               "--out", str(tmp_path / "maps")],
    )
    assert result.exit_code == 0, result.output
    assert read_tensor(tmp_path / "maps" / "cut_ego_002.cut.ftm").sum() == pytest.approx(1.0, abs=1e-5)

    result = runner.invoke(
        main, ["ground", str(tmp_path / "run" / "checkpoint"), "--image", str(image), "--out", str(tmp_path)]
    )
    assert result.exit_code == 2


@pytest.mark.slow
def test_tiny_pipeline(runner, tmp_path, tiny_dataset, tiny_config_file):
    run = tmp_path / "run"
    maps = tmp_path / "maps"
    steps = [
        ["train", str(tiny_dataset), "--out", str(run), "--config", str(tiny_config_file), "--epochs", "2"],
        ["ground", str(run / "checkpoint"), str(tiny_dataset), "--out", str(maps), "--workers", "2"],
        ["eval", str(tiny_dataset), str(maps)],
    ]
    for argv in steps:
        result = runner.invoke(main, argv)
        assert result.exit_code == 0, f"{argv[0]}: {result.output}"
    assert "overall" in read_report(maps / "report.csv")


@pytest.mark.slow
def test_synthetic_end_to_end_beats_uniform(runner, tmp_path):
    data = tmp_path / "data"
    run = tmp_path / "run"
    maps = tmp_path / "maps"
    steps = [
        ["synth", "--out", str(data), "--classes", "3", "--ego", "30", "--exo", "30", "--seed", "7"],
        ["train", str(data / "manifest.jsonl"), "--out", str(run), "--profile", "toy", "--epochs", "20"],
        ["ground", str(run / "checkpoint"), str(data / "manifest.jsonl"), "--out", str(maps)],
        ["eval", str(data / "manifest.jsonl"), str(maps)],
    ]
    for argv in steps:
        result = runner.invoke(main, argv)
        assert result.exit_code == 0, f"{argv[0]}: {result.output}"

    with (run / "loss_log.csv").open(newline="") as handle:
        rows = list(csv.DictReader(handle))
    totals = {
        epoch: np.mean([float(r["total"]) for r in rows if r["epoch"] == str(epoch)]) for epoch in (1, 20)
    }
    assert totals[20] < totals[1]

    seen = read_report(maps / "report.csv")["partition:seen"]
    assert seen["nss"].mean >= 0.5
    assert seen["kld"].mean <= 0.8 * seen["kld_uniform"].mean
    assert seen["hit"].mean >= 0.7
