"""Heatmap metrics (KLD, SIM, NSS) and the sliced evaluation harness."""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import SampleRecord, head_tail_split, top_mass_mask
from .errors import DegeneratePredictionError, DomainError, FormatError, ShapeError
from .ftm import read_tensor
from .heatmap import upsample_bilinear

log = logging.getLogger(__name__)

EPS = 1e-12
METRICS = ("kld", "sim", "nss", "hit", "kld_uniform", "sim_uniform")
REPORT_HEADER = ("slice", "metric", "mean", "std", "n")


@dataclass(frozen=True)
class HeatmapPair:
    prediction: np.ndarray
    ground_truth: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.prediction, dtype=np.float64)
        q = np.asarray(self.ground_truth, dtype=np.float64)
        if p.shape != q.shape:
            raise ShapeError(f"prediction {p.shape} and ground truth {q.shape} differ in shape")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise DomainError("heatmaps must be finite")
        object.__setattr__(self, "prediction", p)
        object.__setattr__(self, "ground_truth", q)


def _as_distribution(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise DomainError(f"{name} has negative entries")
    total = m.sum()
    if not total > 0:
        raise DomainError(f"{name} sums to zero")
    return m / total


def kld(prediction: np.ndarray, ground_truth: np.ndarray, eps: float = EPS) -> float:
    pair = HeatmapPair(prediction, ground_truth)
    p = _as_distribution(pair.prediction, "prediction")
    q = _as_distribution(pair.ground_truth, "ground truth")
    return float(np.sum(q * np.log(eps + q / (eps + p))))


def sim(prediction: np.ndarray, ground_truth: np.ndarray) -> float:
    pair = HeatmapPair(prediction, ground_truth)
    p = _as_distribution(pair.prediction, "prediction")
    q = _as_distribution(pair.ground_truth, "ground truth")
    return float(np.sum(np.minimum(p, q)))


def nss(prediction: np.ndarray, ground_truth: np.ndarray) -> float:
    """Ground-truth-weighted mean of the standardised prediction; the weights stay continuous."""
    pair = HeatmapPair(prediction, ground_truth)
    p = pair.prediction
    sigma = p.std()
    if sigma == 0:
        raise DegeneratePredictionError("prediction is constant; NSS is undefined")
    q = pair.ground_truth
    if np.any(q < 0) or not q.sum() > 0:
        raise DomainError("ground truth must be non-negative with a positive sum")
    return float(np.sum((p - p.mean()) / sigma * q) / q.sum())


def hit(prediction: np.ndarray, ground_truth: np.ndarray, threshold_mass: float = 0.5) -> float:
    """1.0 when the prediction's peak lies in the ground truth's top-mass region."""
    pair = HeatmapPair(prediction, ground_truth)
    peak = np.unravel_index(np.argmax(pair.prediction), pair.prediction.shape)
    return float(top_mass_mask(pair.ground_truth, threshold_mass)[peak])


def score_pair(prediction: np.ndarray, ground_truth: np.ndarray, eps: float = EPS) -> dict[str, float]:
    uniform = np.full(np.shape(ground_truth), 1.0)
    try:
        nss_value = nss(prediction, ground_truth)
    except DegeneratePredictionError:
        nss_value = math.nan
    return {
        "kld": kld(prediction, ground_truth, eps),
        "sim": sim(prediction, ground_truth),
        "nss": nss_value,
        "hit": hit(prediction, ground_truth),
        "kld_uniform": kld(uniform, ground_truth, eps),
        "sim_uniform": sim(uniform, ground_truth),
    }


# --- evaluation over a manifest ---


@dataclass(frozen=True)
class SliceStat:
    mean: float
    std: float
    n: int


@dataclass
class MetricReport:
    images: list[tuple[SampleRecord, dict[str, float]]] = field(default_factory=list)
    slices: dict[str, dict[str, SliceStat]] = field(default_factory=dict)
    missing: list[str] = field(default_factory=list)

    def get(self, slice_name: str, metric: str) -> SliceStat:
        return self.slices[slice_name][metric]

    def rows(self) -> list[tuple[str, str, float, float, int]]:
        return [
            (name, metric, stat.mean, stat.std, stat.n)
            for name, stats in self.slices.items()
            for metric, stat in stats.items()
        ]

    def write_csv(self, path: Path | str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(REPORT_HEADER)
            for name, metric, mean, std, n in self.rows():
                writer.writerow([name, metric, repr(mean), repr(std), n])
        return path

    def write_images_csv(self, path: Path | str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(("id", "affordance", *METRICS))
            for record, scores in self.images:
                writer.writerow([record.id, record.affordance, *(repr(scores[m]) for m in METRICS)])
        return path


def read_report(path: Path | str) -> dict[str, dict[str, SliceStat]]:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"report not found: {path}")
    slices: dict[str, dict[str, SliceStat]] = {}
    with path.open("r", newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != REPORT_HEADER:
            raise FormatError(f"{path}: expected header {','.join(REPORT_HEADER)}")
        for row in reader:
            slices.setdefault(row["slice"], {})[row["metric"]] = SliceStat(
                mean=float(row["mean"]), std=float(row["std"]), n=int(row["n"])
            )
    return slices


def prediction_path(heatmap_dir: Path | str, record: SampleRecord) -> Path:
    return Path(heatmap_dir) / f"{record.id}.{record.affordance}.ftm"


def _slice_names(record: SampleRecord, frequency: dict[str, str]) -> list[str]:
    names = ["overall", f"class:{record.affordance}", f"partition:{record.seen_partition}"]
    if record.scale:
        names.append(f"scale:{record.scale}")
    names.extend(f"attr:{tag}" for tag in record.tags)
    names.append(f"freq:{frequency[record.affordance]}")
    return names


def _stat(values: list[float]) -> SliceStat:
    finite = np.array([v for v in values if math.isfinite(v)], dtype=np.float64)
    if finite.size == 0:
        return SliceStat(mean=math.nan, std=math.nan, n=0)
    return SliceStat(mean=float(finite.mean()), std=float(finite.std()), n=int(finite.size))


def evaluate_set(
    heatmap_dir: Path | str,
    records: Sequence[SampleRecord],
    workers: int = 1,
    eps: float = EPS,
) -> MetricReport:
    """Score every test egocentric record against its ground truth and aggregate per slice."""
    targets = [r for r in records if r.is_test_ego]
    frequency = head_tail_split(records)
    report = MetricReport()

    def score(record: SampleRecord) -> dict[str, float] | None:
        path = prediction_path(heatmap_dir, record)
        if not path.exists():
            return None
        ground_truth = read_tensor(record.gt_heatmap_path)
        prediction = read_tensor(path)
        if prediction.shape != ground_truth.shape:
            prediction = np.maximum(upsample_bilinear(prediction, ground_truth.shape), 0.0)
        return score_pair(prediction, ground_truth, eps)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        scored = list(pool.map(score, targets))

    buckets: dict[str, dict[str, list[float]]] = {}
    for record, scores in zip(targets, scored):
        if scores is None:
            report.missing.append(record.id)
            continue
        report.images.append((record, scores))
        for name in _slice_names(record, frequency):
            bucket = buckets.setdefault(name, {m: [] for m in METRICS})
            for metric in METRICS:
                bucket[metric].append(scores[metric])

    report.slices = {
        name: {metric: _stat(values) for metric, values in bucket.items()}
        for name, bucket in buckets.items()
    }
    if report.missing:
        log.warning("%d prediction(s) missing: %s", len(report.missing), ", ".join(report.missing))
    return report
