"""Multi-seed ablation of the AIM and CFT modules and the ACP and KT losses on one manifest."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from pathlib import Path

from .config import TrainConfig
from .dataset import SampleRecord, select
from .grounder import ground_records
from .metrics import evaluate_set
from .trainer import train

log = logging.getLogger(__name__)

# CFT reads the AIM dictionary, so dropping AIM drops CFT too.
VARIANTS: dict[str, dict[str, object]] = {
    "full": {},
    "no_acp": {"lambda2": 0.0},
    "no_kt": {"lambda3": 0.0},
    "no_cft": {"use_cft": False},
    "no_aim": {"use_aim": False, "use_cft": False},
    "baseline": {"use_aim": False, "use_cft": False, "lambda2": 0.0},
}


def run_ablation(
    records: Sequence[SampleRecord],
    base: TrainConfig,
    out_dir: Path | str,
    seeds: int,
    progress: Callable[[str], None] | None = None,
) -> dict[str, list[float]]:
    """Mean seen-split KLD per variant and seed, in ``VARIANTS`` order."""
    out_dir = Path(out_dir)
    targets = select(records, role="egocentric", split="test")
    results: dict[str, list[float]] = {name: [] for name in VARIANTS}
    for seed in range(base.seed, base.seed + seeds):
        for name, changes in VARIANTS.items():
            run_dir = out_dir / f"{name}_seed{seed}"
            if progress:
                progress(f"{name} (seed {seed})")
            config = base.replace(seed=seed, **changes)
            trained = train(records, config, run_dir)
            heatmaps = run_dir / "heatmaps"
            ground_records(trained.model, targets, heatmaps, workers=config.workers)
            report = evaluate_set(heatmaps, records, workers=config.workers)
            seen = report.slices.get("partition:seen", report.slices.get("overall"))
            results[name].append(seen["kld"].mean if seen else float("nan"))

    full = _mean(results["full"])
    for name, values in results.items():
        if name != "full" and _mean(values) < full:
            log.warning("ablation '%s' has lower KLD (%.4f) than the full model (%.4f)", name, _mean(values), full)
    return results


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else float("nan")
