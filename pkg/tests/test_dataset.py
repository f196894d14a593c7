import json
import os
import random
from pathlib import Path

import numpy as np
import pytest

from conftest import KNOWN_COMPOSITION, build_dataset
from pcnet.core import BoundingBox
from pcnet.dataset import (
    DatasetError,
    DatasetManifest,
    compute_stats,
    export_stats_csv,
    generate_synthetic,
    load_manifest,
    load_object_mask,
    read_mask,
    write_annotations,
    write_mask,
)


def test_load_known_manifest(known_root):
    full = load_manifest(known_root, "full")
    assert len(full) == len(KNOWN_COMPOSITION)
    assert [r.id for r in full] == sorted(r.id for r in full)
    train = load_manifest(known_root, "train")
    test = load_manifest(known_root, "test")
    assert {r.id for r in train} | {r.id for r in test} == {r.id for r in full}
    assert not {r.id for r in train} & {r.id for r in test}
    assert full.category_index["lithops"] == ["img000", "img001"]


def test_parallel_validation_matches_serial(known_root):
    assert load_manifest(known_root, workers=4) == load_manifest(known_root)


def test_synthetic_three_records(tmp_path):
    m = generate_synthetic(seed=3, n=3, size=48, root=tmp_path)
    assert len(load_manifest(tmp_path, "full")) == 3 == len(m)


def test_instance_omitting_object_pixel_is_rejected(known_root):
    inst = known_root / "Instance" / "img002_1.png"
    mask = read_mask(inst).values.copy()
    mask[0, 0] = False
    write_mask(inst, mask)
    with pytest.raises(DatasetError, match="union of instance masks"):
        load_manifest(known_root)


def test_loose_box_is_rejected(known_root):
    doc = json.loads((known_root / "annotations.json").read_text())
    doc["images"]["img001"]["boxes"] = [[9, 10, 14, 16]]
    (known_root / "annotations.json").write_text(json.dumps(doc))
    with pytest.raises(DatasetError, match="not tight"):
        load_manifest(known_root)


@pytest.mark.parametrize(
    "field, value, match",
    [
        ("vision", ["XX"], "unknown attribute"),
        ("category", "cactus", "unknown category"),
        ("strategy", [], "strategy"),
    ],
)
def test_bad_annotations_rejected(known_root, field, value, match):
    doc = json.loads((known_root / "annotations.json").read_text())
    doc["images"]["img000"][field] = value
    (known_root / "annotations.json").write_text(json.dumps(doc))
    with pytest.raises(DatasetError, match=match):
        load_manifest(known_root)


def test_missing_file_reported_with_path(known_root):
    os.remove(known_root / "GT" / "img003.png")
    with pytest.raises(DatasetError, match="img003.png"):
        load_manifest(known_root)


def test_non_binary_mask_rejected(tmp_path):
    from PIL import Image

    Image.fromarray(np.array([[0, 128], [255, 0]], np.uint8)).save(tmp_path / "m.png")
    with pytest.raises(DatasetError, match="0 or 255"):
        read_mask(tmp_path / "m.png")


def test_overlapping_splits_rejected(tmp_path):
    root = build_dataset(tmp_path, splits={"train": ["img000", "img001"], "test": ["img001"]})
    with pytest.raises(DatasetError, match="overlap"):
        load_manifest(root, "train")


def test_round_trip_annotations(known_root):
    m = load_manifest(known_root)
    write_annotations(known_root, m.records, m.categories, m.splits)
    assert load_manifest(known_root) == m
    first = (known_root / "annotations.json").read_text()
    write_annotations(known_root, load_manifest(known_root).records, m.categories, m.splits)
    assert (known_root / "annotations.json").read_text() == first


class TestStats:
    def test_hand_counted_composition(self, known_root):
        s = compute_stats(load_manifest(known_root))
        assert s.category_histogram == {"lithops": 2, "moss": 2, "caladium": 1, "fern": 1, "mistletoe": 1}
        assert s.strategy_counts == {"BM": 3, "DC": 1, "MQ": 3, "DR": 1}
        assert s.strategy_distribution == {"BM": 3 / 8, "DC": 1 / 8, "MQ": 3 / 8, "DR": 1 / 8}
        assert s.category_strategy_counts == {"BM": 2, "DC": 1, "MQ": 2, "DR": 1}
        assert s.category_strategy_distribution["BM"] == 2 / 6
        assert s.vision_attribute_counts == {"MO": 2, "SC": 3, "OC": 2, "BO": 1, "SO": 2, "OV": 2}
        codes = ["MO", "SC", "OC", "BO", "SO", "OV"]
        expected = np.zeros((6, 6), int)
        for a, b, n in [("MO", "SO", 1), ("MO", "SC", 1), ("MO", "OC", 1), ("SC", "OC", 2), ("BO", "OV", 1)]:
            expected[codes.index(a), codes.index(b)] = expected[codes.index(b), codes.index(a)] = n
        for c, n in s.vision_attribute_counts.items():
            expected[codes.index(c), codes.index(c)] = n
        np.testing.assert_array_equal(s.attribute_cooccurrence, expected)
        buckets = sorted(p[2] for p in s.resolution_points)
        assert buckets == sorted(
            ["1.1<w/h<=1.5", "1.1<w/h<=1.5", "0.7<w/h<=1.1", "other", "1.1<w/h<=1.5", "0.7<w/h<=1.1", "other"]
        )

    def test_four_record_bm_fraction(self, tmp_path):
        comp = [
            (f"c{i}", [s], [], (32, 32), [(4, 4, 8, 8)])
            for i, s in enumerate(["BM", "BM", "MQ", "DC"])
        ]
        s = compute_stats(load_manifest(build_dataset(tmp_path, comp)))
        assert s.strategy_distribution["BM"] == 0.5
        assert sum(s.strategy_distribution.values()) == pytest.approx(1.0, abs=1e-9)

    def test_permutation_invariant(self, known_root):
        m = load_manifest(known_root)
        recs = list(m.records)
        random.Random(1).shuffle(recs)
        shuffled = DatasetManifest(m.root, m.split, tuple(recs), m.categories)
        a, b = compute_stats(m), compute_stats(shuffled)
        assert a.strategy_distribution == b.strategy_distribution
        assert a.category_histogram == b.category_histogram
        assert a.resolution_points == b.resolution_points
        np.testing.assert_array_equal(a.attribute_cooccurrence, b.attribute_cooccurrence)

    def test_empty_manifest(self, known_root):
        with pytest.raises(DatasetError):
            compute_stats(DatasetManifest(known_root, "full", ()))

    def test_csv_export(self, known_root, tmp_path):
        s = compute_stats(load_manifest(known_root))
        paths = export_stats_csv(s, tmp_path / "stats")
        lines = paths["category_histogram"].read_text().strip().splitlines()
        assert len(lines) - 1 == len(s.category_histogram)
        rows = [l.split(",") for l in paths["strategy_distribution"].read_text().strip().splitlines()[1:]]
        assert sum(float(r[2]) for r in rows) == pytest.approx(1.0, abs=1e-5)
        assert sum(float(r[4]) for r in rows) == pytest.approx(1.0, abs=1e-5)


class TestSynthetic:
    def test_self_consistent(self, synth_root):
        m = load_manifest(synth_root)
        assert len(m) == 8
        for rec in m:
            assert (rec.width, rec.height) == (64, 64)

    def test_deterministic(self, tmp_path):
        generate_synthetic(seed=5, n=4, size=48, root=tmp_path / "a")
        generate_synthetic(seed=5, n=4, size=48, root=tmp_path / "b")
        for sub in ("GT", "Instance", "Image"):
            for f in sorted((tmp_path / "a" / sub).iterdir()):
                assert f.read_bytes() == (tmp_path / "b" / sub / f.name).read_bytes()
        assert (tmp_path / "a" / "annotations.json").read_text() == (tmp_path / "b" / "annotations.json").read_text()

    def test_attributes_follow_definitions(self, tmp_path):
        m = generate_synthetic(seed=11, n=40, size=48, root=tmp_path)
        seen_big = False
        for rec in m:
            gt = load_object_mask(rec).values
            ratio = gt.sum() / gt.size
            vision = rec.attributes.vision
            assert ("BO" in vision) == (ratio >= 0.5)
            assert ("SO" in vision) == (ratio <= 0.1)
            assert ("MO" in vision) == (len(rec.instance_mask_paths) > 1)
            touches = gt[0].any() or gt[-1].any() or gt[:, 0].any() or gt[:, -1].any()
            assert ("OV" in vision) == touches
            for box, path in zip(rec.boxes, rec.instance_mask_paths):
                assert BoundingBox.from_mask(read_mask(path)) == box
            seen_big |= ratio >= 0.5
        assert seen_big, "generator never produced a big object in 40 samples"

    def test_easy_contrasts_more_than_hard(self, tmp_path):
        from pcnet.dataset import read_image

        def contrast(diff):
            m = generate_synthetic(seed=2, n=6, size=64, difficulty=diff, root=tmp_path / diff)
            vals = []
            for rec in m:
                img = read_image(rec.image_path).astype(float)
                gt = load_object_mask(rec).values
                vals.append(np.abs(img[gt].mean(0) - img[~gt].mean(0)).mean())
            return np.mean(vals)

        assert contrast("easy") > 2 * contrast("hard")

    @pytest.mark.parametrize("kwargs", [dict(n=0), dict(size=16), dict(difficulty="medium")])
    def test_invalid_arguments(self, tmp_path, kwargs):
        args = dict(seed=0, n=2, size=32, root=tmp_path) | kwargs
        with pytest.raises(ValueError):
            generate_synthetic(**args)


@pytest.mark.skipif(not os.environ.get("PLANTCAMO_ROOT"), reason="real PlantCamo not available")
def test_real_plantcamo_sizes_and_strategy():
    root = Path(os.environ["PLANTCAMO_ROOT"])
    assert len(load_manifest(root, "full", workers=8)) == 1250
    assert len(load_manifest(root, "train", workers=8)) == 1000
    assert len(load_manifest(root, "test", workers=8)) == 250
    stats = compute_stats(load_manifest(root, "full", workers=8))
    assert stats.category_strategy_distribution["BM"] == pytest.approx(0.6379, abs=1e-3)
