"""PlantCamo-style dataset layout, manifests, statistics and a synthetic generator.

On-disk layout::

    <root>/
        annotations.json
        Image/<id>.jpg
        GT/<id>.png            object mask, 0/255
        Instance/<id>_<k>.png  one mask per instance, k = 1..n

``annotations.json``::

    {
      "schema_version": 1,
      "categories": ["<name>", ...],
      "splits": {"train": [<id>, ...], "test": [<id>, ...]},
      "images": {
        "<id>": {"category": "<name>", "strategy": ["BM"], "vision": ["MO", "SO"],
                 "boxes": [[x_min, y_min, x_max, y_max], ...], "instances": 2}
      }
    }

Box ``k`` belongs to instance ``k``; boxes are min-inclusive / max-exclusive.
"""
from __future__ import annotations

import csv
import json
import logging
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image

from .core import (
    STRATEGY_CODES,
    VISION_CODES,
    AttributeSet,
    BinaryMask,
    BoundingBox,
    MapError,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ANNOTATIONS = "annotations.json"
SPLITS = ("full", "train", "test")
# PlantCamo reference sizes for full / train / test
REFERENCE_SPLIT_SIZES = {"full": 1250, "train": 1000, "test": 250}
ASPECT_BUCKETS = (
    ("0.3<w/h<=0.7", 0.3, 0.7),
    ("0.7<w/h<=1.1", 0.7, 1.1),
    ("1.1<w/h<=1.5", 1.1, 1.5),
    ("1.5<w/h<=1.9", 1.5, 1.9),
)
BIG_OBJECT_RATIO = 0.5
SMALL_OBJECT_RATIO = 0.1


class DatasetError(ValueError):
    """Raised when a dataset root does not match the documented layout."""


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image_path: Path
    category: str
    attributes: AttributeSet
    boxes: tuple
    object_mask_path: Path
    instance_mask_paths: tuple
    width: int
    height: int


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    split: str
    records: tuple
    categories: tuple = ()
    splits: dict = field(default_factory=dict, compare=False)

    @property
    def category_index(self) -> dict:
        index: dict = {}
        for rec in self.records:
            index.setdefault(rec.category, []).append(rec.id)
        return index

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self, sample_id: str) -> SampleRecord:
        for rec in self.records:
            if rec.id == sample_id:
                return rec
        raise KeyError(sample_id)

    def subset(self, ids: Iterable[str], split: Optional[str] = None) -> "DatasetManifest":
        keep = set(ids)
        return DatasetManifest(
            self.root,
            split or self.split,
            tuple(r for r in self.records if r.id in keep),
            self.categories,
            self.splits,
        )


# --------------------------------------------------------------------------
# image / mask io

def read_mask(path: Path) -> BinaryMask:
    """Load a 0/255 (or 0/1 bilevel) PNG mask; any other value is an error."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing mask file: {path}")
    with Image.open(path) as im:
        if im.mode == "1":
            return BinaryMask(np.array(im, dtype=bool))
        arr = np.array(im if im.mode == "L" else im.convert("L"))
    values = np.unique(arr)
    if not set(values.tolist()) <= {0, 255}:
        raise DatasetError(f"{path}: mask pixels must be 0 or 255, found {values[:8].tolist()}")
    return BinaryMask(arr == 255)


def write_mask(path: Path, mask) -> None:
    values = mask.values if isinstance(mask, BinaryMask) else np.asarray(mask, bool)
    Image.fromarray(values.astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def read_image(path: Path) -> np.ndarray:
    """RGB image as ``uint8`` array of shape (H, W, 3)."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing image file: {path}")
    with Image.open(path) as im:
        return np.array(im.convert("RGB"))


def image_size(path: Path) -> tuple[int, int]:
    with Image.open(path) as im:
        return im.size


# --------------------------------------------------------------------------
# manifests

def _read_annotations(root: Path) -> dict:
    path = root / ANNOTATIONS
    if not path.is_file():
        raise DatasetError(f"missing {ANNOTATIONS} under {root}")
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DatasetError(f"{path}: unsupported schema_version {version!r}")
    for key in ("categories", "images"):
        if key not in doc:
            raise DatasetError(f"{path}: missing key {key!r}")
    return doc


def _split_ids(doc: dict, split: str, path: Path) -> list[str]:
    all_ids = sorted(doc["images"])
    if split == "full":
        return all_ids
    splits = doc.get("splits") or {}
    if split not in splits:
        raise DatasetError(f"{path}: no {split!r} split listed")
    train, test = set(splits.get("train", ())), set(splits.get("test", ()))
    if train & test:
        raise DatasetError(f"{path}: train and test overlap on {sorted(train & test)[:5]}")
    if train | test != set(all_ids):
        missing = sorted(set(all_ids) - (train | test))
        extra = sorted((train | test) - set(all_ids))
        raise DatasetError(
            f"{path}: splits do not partition the images (unassigned={missing[:5]}, unknown={extra[:5]})"
        )
    return sorted(splits[split])


def _build_record(root: Path, sample_id: str, entry: dict, categories: set) -> SampleRecord:
    where = f"{root / ANNOTATIONS} [{sample_id}]"
    category = entry.get("category")
    if category not in categories:
        raise DatasetError(f"{where}: unknown category {category!r}")
    try:
        attrs = AttributeSet(entry.get("strategy", ()), entry.get("vision", ()))
        boxes = tuple(BoundingBox(*b) for b in entry.get("boxes", ()))
    except (MapError, TypeError) as exc:
        raise DatasetError(f"{where}: {exc}") from exc
    n_inst = int(entry.get("instances", len(boxes)))
    if n_inst < 1:
        raise DatasetError(f"{where}: needs at least one instance")
    if len(boxes) != n_inst:
        raise DatasetError(f"{where}: {len(boxes)} boxes for {n_inst} instances")

    image_path = root / "Image" / f"{sample_id}.jpg"
    if not image_path.is_file():
        raise DatasetError(f"missing image file: {image_path}")
    gt_path = root / "GT" / f"{sample_id}.png"
    inst_paths = tuple(root / "Instance" / f"{sample_id}_{k}.png" for k in range(1, n_inst + 1))

    gt = read_mask(gt_path)
    width, height = image_size(image_path)
    if gt.shape != (height, width):
        raise DatasetError(f"{gt_path}: mask is {gt.width}x{gt.height}, image is {width}x{height}")
    union = np.zeros(gt.shape, bool)
    for k, (path, box) in enumerate(zip(inst_paths, boxes), start=1):
        inst = read_mask(path)
        if inst.shape != gt.shape:
            raise DatasetError(f"{path}: instance shape {inst.shape} != object mask {gt.shape}")
        if inst.area == 0:
            raise DatasetError(f"{path}: empty instance mask")
        tight = BoundingBox.from_mask(inst)
        if tight != box:
            raise DatasetError(f"{where}: box {k} {box.as_list()} is not tight, expected {tight.as_list()}")
        union |= inst.values
    if not np.array_equal(union, gt.values):
        diff = int(np.count_nonzero(union != gt.values))
        raise DatasetError(f"{gt_path}: union of instance masks differs from object mask on {diff} pixels")
    return SampleRecord(
        id=sample_id,
        image_path=image_path,
        category=category,
        attributes=attrs,
        boxes=boxes,
        object_mask_path=gt_path,
        instance_mask_paths=inst_paths,
        width=width,
        height=height,
    )


def load_manifest(root, split: str = "full", workers: int = 1) -> DatasetManifest:
    """Load and validate every record of ``split`` under ``root``.

    Records are ordered by id.  Validation reads every mask, so ``workers > 1``
    spreads it over a thread pool.
    """
    root = Path(root)
    if split not in SPLITS:
        raise DatasetError(f"unknown split {split!r}; expected one of {SPLITS}")
    doc = _read_annotations(root)
    ids = _split_ids(doc, split, root / ANNOTATIONS)
    categories = set(doc["categories"])
    images = doc["images"]

    def build(sample_id):
        return _build_record(root, sample_id, images[sample_id], categories)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(build, ids))
    else:
        records = [build(i) for i in ids]
    return DatasetManifest(
        root=root,
        split=split,
        records=tuple(records),
        categories=tuple(doc["categories"]),
        splits={k: tuple(sorted(v)) for k, v in (doc.get("splits") or {}).items()},
    )


def record_entry(rec: SampleRecord) -> dict:
    attrs = rec.attributes.to_dict()
    return {
        "category": rec.category,
        "strategy": attrs["strategy"],
        "vision": attrs["vision"],
        "boxes": [b.as_list() for b in rec.boxes],
        "instances": len(rec.instance_mask_paths),
    }


def write_annotations(root, records: Iterable[SampleRecord], categories, splits: Optional[dict] = None) -> Path:
    """Write ``annotations.json`` for records whose files already live under ``root``."""
    root = Path(root)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "categories": list(categories),
        "splits": {k: sorted(v) for k, v in (splits or {}).items()},
        "images": {rec.id: record_entry(rec) for rec in sorted(records, key=lambda r: r.id)},
    }
    path = root / ANNOTATIONS
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def load_object_mask(rec: SampleRecord) -> BinaryMask:
    return read_mask(rec.object_mask_path)


# --------------------------------------------------------------------------
# statistics

@dataclass
class DatasetStats:
    n_records: int
    category_histogram: dict
    strategy_counts: dict
    strategy_distribution: dict
    category_strategy_counts: dict
    category_strategy_distribution: dict
    vision_attribute_counts: dict
    attribute_cooccurrence: np.ndarray
    resolution_points: list


def aspect_bucket(width: int, height: int) -> str:
    ratio = width / height
    for name, lo, hi in ASPECT_BUCKETS:
        if lo < ratio <= hi:
            return name
    return "other"


def _fractions(counts: dict) -> dict:
    total = sum(counts.values())
    return {k: (v / total if total else 0.0) for k, v in counts.items()}


def compute_stats(manifest: DatasetManifest) -> DatasetStats:
    """Dataset composition figures.

    Strategy fractions are normalised over all strategy labels, so they sum to
    one even for multi-strategy images.  The per-category variant counts each
    category once with the union of its records' strategies, which is how
    category-level strategy annotations are tallied.
    """
    records = list(manifest.records)
    if not records:
        raise DatasetError("cannot compute statistics of an empty manifest")

    hist: dict = {}
    for rec in records:
        hist[rec.category] = hist.get(rec.category, 0) + 1
    hist = dict(sorted(hist.items(), key=lambda kv: (-kv[1], kv[0])))

    strategy_counts = {c: 0 for c in STRATEGY_CODES}
    per_category: dict = {}
    for rec in records:
        for c in rec.attributes.strategy:
            strategy_counts[c] += 1
        per_category.setdefault(rec.category, set()).update(rec.attributes.strategy)
    cat_counts = {c: sum(c in s for s in per_category.values()) for c in STRATEGY_CODES}

    vision_counts = {c: 0 for c in VISION_CODES}
    cooc = np.zeros((len(VISION_CODES), len(VISION_CODES)), dtype=np.int64)
    for rec in records:
        present = [i for i, c in enumerate(VISION_CODES) if c in rec.attributes.vision]
        for i in present:
            vision_counts[VISION_CODES[i]] += 1
            for j in present:
                cooc[i, j] += 1

    points = sorted(
        ((rec.width, rec.height, aspect_bucket(rec.width, rec.height)) for rec in records)
    )
    return DatasetStats(
        n_records=len(records),
        category_histogram=hist,
        strategy_counts=strategy_counts,
        strategy_distribution=_fractions(strategy_counts),
        category_strategy_counts=cat_counts,
        category_strategy_distribution=_fractions(cat_counts),
        vision_attribute_counts=vision_counts,
        attribute_cooccurrence=cooc,
        resolution_points=points,
    )


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def export_stats_csv(stats: DatasetStats, out_dir) -> dict:
    """One CSV per statistics figure; returns ``{name: path}``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    paths["category_histogram"] = _write_csv(
        out / "category_histogram.csv", ["category", "count"], stats.category_histogram.items()
    )
    paths["strategy_distribution"] = _write_csv(
        out / "strategy_distribution.csv",
        ["strategy", "images", "fraction", "categories", "category_fraction"],
        [
            (
                c,
                stats.strategy_counts[c],
                f"{stats.strategy_distribution[c]:.6f}",
                stats.category_strategy_counts[c],
                f"{stats.category_strategy_distribution[c]:.6f}",
            )
            for c in STRATEGY_CODES
        ],
    )
    paths["attribute_counts"] = _write_csv(
        out / "attribute_counts.csv", ["attribute", "count"], stats.vision_attribute_counts.items()
    )
    paths["attribute_cooccurrence"] = _write_csv(
        out / "attribute_cooccurrence.csv",
        ["attribute", *VISION_CODES],
        [(c, *stats.attribute_cooccurrence[i].tolist()) for i, c in enumerate(VISION_CODES)],
    )
    paths["resolution_scatter"] = _write_csv(
        out / "resolution_scatter.csv", ["width", "height", "aspect_bucket"], stats.resolution_points
    )
    return paths


# --------------------------------------------------------------------------
# synthetic data

SYNTHETIC_CATEGORIES = {
    "moss-cushion": ("BM",),
    "lichen-crust": ("BM",),
    "pebble-succulent": ("MQ",),
    "split-leaf": ("DC",),
    "sand-coated": ("DR",),
}
_PALETTES = (
    ((62, 84, 40), (150, 160, 95)),
    ((95, 80, 60), (190, 170, 130)),
    ((70, 70, 70), (170, 165, 150)),
)


def value_noise(rng: np.random.Generator, h: int, w: int, octaves: int = 4, base_cell: int = 16) -> np.ndarray:
    """Multi-octave value noise in [0, 1] with smoothstep interpolation."""
    out = np.zeros((h, w))
    amp, total = 1.0, 0.0
    cell = max(base_cell, 2)
    for _ in range(octaves):
        gh, gw = h // cell + 2, w // cell + 2
        lattice = rng.random((gh, gw))
        ys = np.arange(h) / cell
        xs = np.arange(w) / cell
        y0 = ys.astype(int)
        x0 = xs.astype(int)
        ty = ys - y0
        tx = xs - x0
        ty = ty * ty * (3 - 2 * ty)
        tx = tx * tx * (3 - 2 * tx)
        a = lattice[np.ix_(y0, x0)]
        b = lattice[np.ix_(y0, x0 + 1)]
        c = lattice[np.ix_(y0 + 1, x0)]
        d = lattice[np.ix_(y0 + 1, x0 + 1)]
        top = a + (b - a) * tx[None, :]
        bot = c + (d - c) * tx[None, :]
        out += amp * (top + (bot - top) * ty[:, None])
        total += amp
        amp *= 0.5
        cell = max(cell // 2, 1)
    out /= total
    lo, hi = out.min(), out.max()
    return (out - lo) / (hi - lo) if hi > lo else np.zeros_like(out)


def _texture(rng, size, palette) -> np.ndarray:
    noise = value_noise(rng, size, size, base_cell=max(size // 6, 4))
    c0, c1 = (np.array(c, dtype=np.float64) for c in palette)
    grain = rng.normal(0, 6, size=(size, size, 3))
    img = c0 + noise[..., None] * (c1 - c0) + grain
    return np.clip(img, 0, 255)


def _blob(rng, size) -> np.ndarray:
    cy, cx = rng.uniform(0.1, 0.9, size=2) * size
    radius = rng.uniform(0.1, 0.55) * size
    aspect = rng.uniform(0.6, 1.4)
    yy, xx = np.mgrid[0:size, 0:size]
    r = np.hypot((yy - cy) / aspect, (xx - cx) * aspect) / radius
    # one smooth octave: outlines stay resolvable by a stride-4 decoder at 64 px
    wobble = value_noise(rng, size, size, octaves=1, base_cell=max(size // 3, 4))
    return r + 0.45 * (wobble - 0.5) < 1.0


def derive_vision_attributes(instances: list, height: int, width: int) -> set:
    """MO / BO / SO / OV from instance masks, per the attribute definitions."""
    obj = np.zeros((height, width), bool)
    for m in instances:
        obj |= m
    ratio = obj.sum() / obj.size
    codes = set()
    if len(instances) > 1:
        codes.add("MO")
    if ratio >= BIG_OBJECT_RATIO:
        codes.add("BO")
    if ratio <= SMALL_OBJECT_RATIO:
        codes.add("SO")
    if obj[0, :].any() or obj[-1, :].any() or obj[:, 0].any() or obj[:, -1].any():
        codes.add("OV")
    return codes


def generate_synthetic(
    seed: int,
    n: int,
    size: int = 64,
    difficulty: str = "hard",
    root=None,
    test_every: int = 5,
) -> DatasetManifest:
    """Write ``n`` synthetic camouflage samples under ``root`` and load them.

    Each sample is a value-noise texture with 1-3 foreground blobs.  ``hard``
    blobs reuse the background palette (only the noise realisation differs);
    ``easy`` blobs use a contrasting palette.  Every ``test_every``-th sample
    goes to the test split.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if size < 32:
        raise ValueError("size must be at least 32")
    if difficulty not in ("easy", "hard"):
        raise ValueError(f"unknown difficulty {difficulty!r}")
    root = Path(root) if root is not None else Path(tempfile.mkdtemp(prefix="plantcamo-synth-"))
    for sub in ("Image", "GT", "Instance"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    names = sorted(SYNTHETIC_CATEGORIES)
    images: dict = {}
    for i in range(n):
        sample_id = f"{i:05d}"
        bg_palette = _PALETTES[rng.integers(len(_PALETTES))]
        if difficulty == "hard":
            fg_palette = bg_palette
        else:
            lo, hi = bg_palette
            fg_palette = (tuple(255 - v for v in hi), tuple(255 - v for v in lo))
        img = _texture(rng, size, bg_palette)

        n_blobs = int(rng.choice([1, 1, 2, 3]))
        taken = np.zeros((size, size), bool)
        instances = []
        for _ in range(n_blobs):
            blob = _blob(rng, size) & ~taken
            if blob.sum() < 4:
                continue
            taken |= blob
            instances.append(blob)
        if not instances:
            yy, xx = np.mgrid[0:size, 0:size]
            blob = np.hypot(yy - size / 2, xx - size / 2) < size / 5
            taken |= blob
            instances.append(blob)
        fg = _texture(rng, size, fg_palette)
        img[taken] = fg[taken]

        category = names[rng.integers(len(names))]
        if difficulty == "hard":
            category = names[rng.integers(2)] if rng.random() < 0.7 else category
        vision = derive_vision_attributes(instances, size, size)

        Image.fromarray(img.astype(np.uint8), mode="RGB").save(
            root / "Image" / f"{sample_id}.jpg", format="JPEG", quality=95
        )
        write_mask(root / "GT" / f"{sample_id}.png", taken)
        for k, m in enumerate(instances, start=1):
            write_mask(root / "Instance" / f"{sample_id}_{k}.png", m)
        images[sample_id] = {
            "category": category,
            "strategy": list(SYNTHETIC_CATEGORIES[category]),
            "vision": sorted(vision),
            "boxes": [BoundingBox.from_mask(m).as_list() for m in instances],
            "instances": len(instances),
        }

    ids = sorted(images)
    test = [i for k, i in enumerate(ids) if test_every and k % test_every == test_every - 1]
    doc = {
        "schema_version": SCHEMA_VERSION,
        "categories": names,
        "splits": {"train": [i for i in ids if i not in set(test)], "test": test},
        "images": images,
    }
    with open(root / ANNOTATIONS, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    log.info("wrote %d synthetic samples to %s", n, root)
    return load_manifest(root, "full")
