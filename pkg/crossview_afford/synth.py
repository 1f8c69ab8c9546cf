"""Seeded synthetic affordance dataset for desk-scale end-to-end runs.

Each affordance class marks a coloured interactive part at a class-specific
position on an object. Egocentric images show the object alone. Exocentric
images add a skin-toned "actor" blob over the part at a jittered offset.
Seen and unseen objects come from disjoint shape vocabularies.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import PointAnnotation, SampleRecord, dump_manifest, points_to_heatmap, scale_split
from .errors import ConfigError
from .ftm import write_tensor

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
AFFORDANCES = ("grasp", "cut", "pour", "sit_on", "ride", "push", "kick", "swing")
SEEN_SHAPES = ("box", "disk")
UNSEEN_SHAPES = ("diamond", "ellipse")
PART_COLORS = (
    (220, 40, 40), (40, 180, 60), (40, 80, 220), (230, 200, 30),
    (200, 50, 200), (30, 200, 210), (240, 130, 20), (120, 60, 20),
)
ACTOR_COLOR = (225, 180, 150)


def _affordance_names(n_classes: int) -> list[str]:
    return [
        AFFORDANCES[i] if i < len(AFFORDANCES) else f"{AFFORDANCES[i % len(AFFORDANCES)]}{i // len(AFFORDANCES)}"
        for i in range(n_classes)
    ]


def _shape_mask(shape: str, dx: np.ndarray, dy: np.ndarray, radius: float) -> np.ndarray:
    if shape == "box":
        return (np.abs(dx) <= radius) & (np.abs(dy) <= 0.8 * radius)
    if shape == "disk":
        return dx * dx + dy * dy <= radius * radius
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= 1.2 * radius
    if shape == "ellipse":
        return (dx / (1.3 * radius)) ** 2 + (dy / (0.7 * radius)) ** 2 <= 1.0
    raise ConfigError(f"unknown synthetic shape '{shape}'")


class _Scene:
    def __init__(self, rng: np.random.Generator, size: int, n_classes: int, class_index: int, shape: str) -> None:
        self.size = size
        self.radius = size / 4
        margin = self.radius + 2
        self.cy, self.cx = rng.uniform(margin, size - margin, size=2)
        self.shape = shape
        angle = 2 * math.pi * class_index / n_classes
        reach = 0.6 * self.radius
        self.part_x = float(np.clip(self.cx + reach * math.cos(angle), 0, size - 1))
        self.part_y = float(np.clip(self.cy + reach * math.sin(angle), 0, size - 1))
        self.part_radius = size / 12
        self.part_color = PART_COLORS[class_index % len(PART_COLORS)]
        self.body_tone = int(rng.integers(90, 150))

    def render(self, rng: np.random.Generator, actor: bool, clutter: bool) -> np.ndarray:
        size = self.size
        rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
        canvas = np.full((size, size, 3), 200.0) + rng.normal(0.0, 6.0, size=(size, size, 3))
        if clutter:
            cy, cx = rng.uniform(0, size, size=2)
            blob = (rows - cy) ** 2 + (cols - cx) ** 2 <= (size / 10) ** 2
            canvas[blob] = rng.integers(0, 256, size=3)
        body = _shape_mask(self.shape, cols - self.cx, rows - self.cy, self.radius)
        canvas[body] = self.body_tone
        part = (cols - self.part_x) ** 2 + (rows - self.part_y) ** 2 <= self.part_radius ** 2
        canvas[part] = self.part_color
        if actor:
            jy, jx = rng.uniform(-self.part_radius, self.part_radius, size=2)
            hand = ((cols - self.part_x - jx) / (1.4 * self.part_radius)) ** 2 + (
                (rows - self.part_y - jy) / self.part_radius
            ) ** 2 <= 1.0
            canvas[hand] = ACTOR_COLOR
        return np.clip(np.round(canvas), 0, 255).astype(np.uint8)

    def ground_truth(self, image_id: str, affordance: str) -> np.ndarray:
        ann = PointAnnotation(image_id, self.size, self.size, ((self.part_x, self.part_y, 1.0),))
        return points_to_heatmap(ann, sigma=self.part_radius, affordance=affordance).map


def generate_synthetic(
    out_dir: Path | str,
    n_classes: int,
    n_ego: int,
    n_exo_per_class: int,
    seed: int,
    image_size: int = 64,
) -> Path:
    """Write images, ground-truth heatmaps and ``manifest.jsonl``; returns the manifest path.

    ``n_ego`` egocentric images per class, a third of which (rounded down) are
    test images alternating between seen and unseen shapes.
    """
    if min(n_classes, n_ego, n_exo_per_class) < 1:
        raise ConfigError("synthetic counts must all be >= 1")
    if image_size < 16:
        raise ConfigError(f"image_size must be >= 16, got {image_size}")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "gt").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    records: list[SampleRecord] = []
    for k, affordance in enumerate(_affordance_names(n_classes)):
        n_test = n_ego // 3
        for i in range(n_ego):
            image_id = f"{affordance}_ego_{i:03d}"
            is_test = i >= n_ego - n_test
            unseen = is_test and (i - (n_ego - n_test)) % 2 == 1
            shape = str(rng.choice(UNSEEN_SHAPES if unseen else SEEN_SHAPES))
            scene = _Scene(rng, image_size, n_classes, k, shape)
            clutter = bool(rng.random() < 1 / 3)
            image_path = out_dir / "images" / f"{image_id}.png"
            Image.fromarray(scene.render(rng, actor=False, clutter=clutter)).save(image_path)

            gt_path = None
            attributes: list[str] = []
            if is_test:
                gt = scene.ground_truth(image_id, affordance)
                gt_path = write_tensor(out_dir / "gt" / f"{image_id}.ftm", gt)
                attributes.append(scale_split(gt))
                if clutter:
                    attributes.append("BC")
            records.append(
                SampleRecord(
                    id=image_id,
                    role="egocentric",
                    affordance=affordance,
                    object=shape,
                    split="test" if is_test else "train",
                    seen_partition="unseen" if unseen else "seen",
                    image_path=str(image_path),
                    gt_heatmap_path=str(gt_path) if gt_path else None,
                    attributes=tuple(attributes),
                )
            )

        for i in range(n_exo_per_class):
            image_id = f"{affordance}_exo_{i:03d}"
            shape = str(rng.choice(SEEN_SHAPES))
            scene = _Scene(rng, image_size, n_classes, k, shape)
            image_path = out_dir / "images" / f"{image_id}.png"
            Image.fromarray(scene.render(rng, actor=True, clutter=bool(rng.random() < 1 / 3))).save(image_path)
            records.append(
                SampleRecord(
                    id=image_id,
                    role="exocentric",
                    affordance=affordance,
                    object=shape,
                    split="train",
                    seen_partition="seen",
                    image_path=str(image_path),
                )
            )

    manifest = dump_manifest(records, out_dir / MANIFEST_NAME)
    log.info("Generated %d records in %s", len(records), out_dir)
    return manifest
