from __future__ import annotations

import json
import math

import numpy as np
import pytest
from PIL import Image

from crossview_afford.dataset import (
    PointAnnotation,
    SampleRecord,
    dump_manifest,
    head_tail_split,
    load_annotations,
    load_image,
    load_manifest,
    points_to_heatmap,
    random_crop_flip,
    resize_image,
    scale_from_ratio,
    scale_split,
    select,
    top_mass_mask,
)
from crossview_afford.errors import AnnotationError, ConfigError, DatasetError, FormatError, ParseError

EGO_TEST = {
    "id": "e1", "role": "egocentric", "affordance": "cut", "object": "knife", "split": "test",
    "seen_partition": "seen", "image_path": "images/e1.png", "gt_heatmap_path": "gt/e1.ftm",
    "attributes": ["Small", "BC"],
}
EXO_TRAIN = {
    "id": "x1", "role": "exocentric", "affordance": "cut", "object": "knife", "split": "train",
    "seen_partition": "seen", "image_path": "images/x1.png",
}


def _manifest(tmp_path, *rows) -> object:
    path = tmp_path / "manifest.jsonl"
    path.write_text("".join((row if isinstance(row, str) else json.dumps(row)) + "\n" for row in rows))
    return path


def _record(image_id, affordance, role="egocentric", split="train"):
    return SampleRecord(
        id=image_id, role=role, affordance=affordance, object="box",
        split=split, seen_partition="seen", image_path=f"{image_id}.png",
    )


class TestManifest:
    def test_empty_file(self, tmp_path):
        assert load_manifest(_manifest(tmp_path)) == []

    def test_paths_resolve_against_manifest(self, tmp_path):
        [ego, exo] = load_manifest(_manifest(tmp_path, EGO_TEST, EXO_TRAIN))
        assert ego.image_path == str(tmp_path.resolve() / "images" / "e1.png")
        assert ego.is_test_ego
        assert (ego.scale, ego.tags) == ("Small", ("BC",))
        assert exo.gt_heatmap_path is None
        assert exo.attributes == ()

    def test_round_trip(self, tmp_path):
        records = load_manifest(_manifest(tmp_path, EGO_TEST, EXO_TRAIN))
        again = load_manifest(dump_manifest(records, tmp_path / "copy.jsonl"))
        assert again == records
        assert json.loads((tmp_path / "copy.jsonl").read_text().splitlines()[0])["image_path"] == "images/e1.png"

    @pytest.mark.parametrize(
        "row, message",
        [
            ("{not json", "invalid JSON"),
            ("[1, 2]", "JSON object"),
            ({**EXO_TRAIN, "role": "egocentrc"}, "field 'role'"),
            ({k: v for k, v in EXO_TRAIN.items() if k != "object"}, "missing field"),
            ({**EXO_TRAIN, "attributes": ["Huge"]}, "unknown attribute"),
            ({**EXO_TRAIN, "affordance": "a,b"}, "invalid affordance"),
            ({k: v for k, v in EGO_TEST.items() if k != "gt_heatmap_path"}, "no gt_heatmap_path"),
            ({**EGO_TEST, "attributes": ["Big", "Small"]}, "exactly one of"),
            ({**EGO_TEST, "attributes": []}, "exactly one of"),
            ({**EXO_TRAIN, "image_path": None}, "field 'image_path'"),
            ({**EXO_TRAIN, "image_path": 7}, "field 'image_path'"),
            ({**EGO_TEST, "gt_heatmap_path": ["gt/e1.ftm"]}, "field 'gt_heatmap_path'"),
            ({**EXO_TRAIN, "attributes": [["Big"]]}, "list of strings"),
            ({**EXO_TRAIN, "attributes": "Big"}, "list of strings"),
        ],
    )
    def test_errors_name_the_line(self, tmp_path, row, message):
        with pytest.raises(ParseError, match=f"line 2: .*{message}") as info:
            load_manifest(_manifest(tmp_path, EXO_TRAIN, row))
        assert info.value.line_number == 2

    def test_duplicate_id_within_role(self, tmp_path):
        with pytest.raises(ParseError, match="line 3: duplicate exocentric id 'x1'"):
            load_manifest(_manifest(tmp_path, EXO_TRAIN, {**EXO_TRAIN, "role": "egocentric"}, EXO_TRAIN))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError):
            load_manifest(tmp_path / "absent.jsonl")

    def test_select(self):
        records = [_record("a", "cut"), _record("b", "cut", role="exocentric"), _record("c", "cut", split="test")]
        assert [r.id for r in select(records, role="egocentric")] == ["a", "c"]
        assert [r.id for r in select(records, role="egocentric", split="train")] == ["a"]
        assert select(records, partition="unseen") == []


class TestHeadTail:
    def test_median_rule(self):
        records = [_record(f"a{i}", "a") for i in range(10)]
        records += [_record(f"b{i}", "b") for i in range(4)]
        records += [_record(f"c{i}", "c") for i in range(2)]
        assert head_tail_split(records) == {"a": "Head", "b": "Tail", "c": "Tail"}

    def test_median_class_is_head(self):
        records = [_record(f"{name}{i}", name) for name, count in (("a", 3), ("b", 3), ("c", 2)) for i in range(count)]
        assert head_tail_split(records) == {"a": "Head", "b": "Head", "c": "Tail"}

    def test_single_class(self):
        assert head_tail_split([_record("a", "a")]) == {"a": "Head"}


class TestPointsToHeatmap:
    def test_single_point_peaks_there(self):
        heatmap = points_to_heatmap(PointAnnotation("p", 9, 9, ((4.0, 4.0, 1.0),)), sigma=1.5, affordance="cut")
        assert np.unravel_index(heatmap.map.argmax(), heatmap.shape) == (4, 4)
        assert heatmap.map.sum() == pytest.approx(1.0, abs=1e-12)
        assert heatmap.stem == "p.cut"

    def test_x_is_column_and_y_is_row(self):
        heatmap = points_to_heatmap(PointAnnotation("p", 10, 6, ((8.0, 1.0, 1.0),)), sigma=1.0)
        assert heatmap.shape == (6, 10)
        assert np.unravel_index(heatmap.map.argmax(), heatmap.shape) == (1, 8)

    def test_mirrored_points_are_flip_symmetric(self):
        ann = PointAnnotation("p", 12, 8, ((2.0, 3.0, 1.0), (9.0, 3.0, 1.0)))
        heatmap = points_to_heatmap(ann, sigma=2.0).map
        np.testing.assert_allclose(heatmap, heatmap[:, ::-1], atol=1e-12)

    def test_matches_double_loop_gaussian(self):
        x0, y0, sigma = 5.0, 9.0, 2.0
        expected = np.zeros((16, 16))
        for row in range(16):
            for col in range(16):
                expected[row, col] = math.exp(-((col - x0) ** 2 + (row - y0) ** 2) / (2 * sigma * sigma))
        expected /= expected.sum()
        heatmap = points_to_heatmap(PointAnnotation("p", 16, 16, ((x0, y0, 1.0),)), sigma=sigma)
        np.testing.assert_allclose(heatmap.map, expected, atol=1e-12, rtol=0)

    def test_weights_shift_mass(self):
        ann = PointAnnotation("p", 20, 5, ((3.0, 2.0, 3.0), (16.0, 2.0, 1.0)))
        heatmap = points_to_heatmap(ann, sigma=1.0).map
        assert heatmap[:, :10].sum() == pytest.approx(0.75, abs=1e-6)

    def test_default_sigma_is_proportional(self):
        ann = PointAnnotation("p", 40, 20, ((20.0, 10.0, 1.0),))
        np.testing.assert_allclose(points_to_heatmap(ann).map, points_to_heatmap(ann, sigma=2.0).map, atol=1e-15)

    def test_tiny_sigma_puts_mass_on_nearest_pixels(self):
        heatmap = points_to_heatmap(PointAnnotation("p", 8, 8, ((3.5, 3.5, 1.0),)), sigma=0.01).map
        assert np.isfinite(heatmap).all()
        assert heatmap.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(heatmap[3:5, 3:5], 0.25, atol=1e-12)

    def test_tiny_sigma_on_a_pixel_centre(self):
        ann = PointAnnotation("p", 6, 6, ((2.0, 5.0, 1.0), (4.0, 1.0, 3.0)))
        heatmap = points_to_heatmap(ann, sigma=1e-3).map
        assert heatmap[5, 2] == pytest.approx(0.25, abs=1e-12)
        assert heatmap[1, 4] == pytest.approx(0.75, abs=1e-12)

    def test_invalid_sigma(self):
        with pytest.raises(ConfigError):
            points_to_heatmap(PointAnnotation("p", 4, 4, ((1.0, 1.0, 1.0),)), sigma=0.0)

    @pytest.mark.parametrize(
        "points, message",
        [((), "no points"), (((4.0, 0.0, 1.0),), "outside"), (((1.0, 1.0, 0.0),), "weight")],
    )
    def test_invalid_annotations(self, points, message):
        with pytest.raises(AnnotationError, match=message):
            PointAnnotation("p", 4, 4, points)


class TestScale:
    @pytest.mark.parametrize(
        "ratio, label", [(0.2, "Big"), (0.1, "Middle"), (0.05, "Middle"), (0.03, "Middle"), (0.01, "Small")]
    )
    def test_ratio_thresholds(self, ratio, label):
        assert scale_from_ratio(ratio) == label

    def test_top_mass_mask(self):
        mask = top_mass_mask(np.array([[0.2, 0.5], [0.3, 0.0]]))
        assert mask.tolist() == [[False, True], [False, False]]
        mask = top_mass_mask(np.array([[0.2, 0.4], [0.4, 0.0]]))
        assert mask.sum() == 2

    def test_scale_split(self):
        assert scale_split(np.full((10, 10), 0.01)) == "Big"
        one_hot = np.zeros((10, 10))
        one_hot[3, 3] = 1.0
        assert scale_split(one_hot) == "Small"

    def test_every_map_gets_one_label(self, rng):
        for _ in range(20):
            assert scale_split(rng.random((8, 8)) ** 8) in ("Big", "Middle", "Small")


class TestAnnotations:
    def test_weight_defaults_to_one(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        path.write_text(
            json.dumps({"id": "a", "width": 8, "height": 6, "points": [[1, 2], [3, 4, 0.5]]}) + "\n\n"
        )
        [ann] = load_annotations(path)
        assert ann.points == ((1.0, 2.0, 1.0), (3.0, 4.0, 0.5))
        assert (ann.width, ann.height) == (8, 6)

    @pytest.mark.parametrize(
        "row, message",
        [
            ({"id": "a", "width": 8, "height": 6}, "invalid annotation"),
            ({"id": "a", "width": 8, "height": 6, "points": [[9, 1]]}, "outside"),
        ],
    )
    def test_errors(self, tmp_path, row, message):
        path = tmp_path / "ann.jsonl"
        good = {"id": "b", "width": 8, "height": 6, "points": [[1, 1]]}
        path.write_text(json.dumps(good) + "\n" + json.dumps(row) + "\n")
        with pytest.raises(ParseError, match=f"line 2: .*{message}"):
            load_annotations(path)


class TestImages:
    def test_load_scales_to_unit_range(self, tmp_path):
        pixels = np.zeros((2, 3, 3), dtype=np.uint8)
        pixels[0, 0] = (255, 0, 255)
        Image.fromarray(pixels).save(tmp_path / "img.png")
        image = load_image(tmp_path / "img.png")
        assert image.shape == (3, 2, 3)
        assert image[:, 0, 0].tolist() == [1.0, -1.0, 1.0]
        assert image[:, 1, 2].tolist() == [-1.0, -1.0, -1.0]

    def test_unreadable_image(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"not an image")
        with pytest.raises(FormatError):
            load_image(tmp_path / "bad.png")

    def test_resize(self, rng):
        image = rng.random((3, 8, 8))
        assert resize_image(image, 8) is image
        assert resize_image(image, 16).shape == (3, 16, 16)

    def test_crop_and_flip(self, rng):
        image = rng.random((3, 10, 10))
        out = random_crop_flip(image, crop_source=12, size=8, rng=rng)
        assert out.shape == (3, 8, 8)
        assert out.flags.c_contiguous

    def test_no_augmentation_is_a_plain_resize(self, rng):
        image = rng.random((3, 8, 8))
        assert np.array_equal(random_crop_flip(image, 12, 8, rng, crop=False, flip=False), image)
