import json
import sys
import os
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from pcnet.dataset import generate_synthetic, write_mask

torch_threads = os.environ.get("PCNET_TEST_THREADS")
if torch_threads:
    import torch

    torch.set_num_threads(int(torch_threads))


# (category, strategy, vision, (width, height), instance rectangles as (x0, y0, x1, y1))
KNOWN_COMPOSITION = [
    ("lithops", ["MQ"], ["MO", "SO"], (40, 30), [(2, 2, 6, 6), (20, 10, 24, 14)]),
    ("lithops", ["MQ"], ["SO"], (40, 30), [(10, 10, 14, 16)]),
    ("moss", ["BM"], ["BO", "OV"], (30, 40), [(0, 0, 30, 30)]),
    ("moss", ["BM"], ["SC", "OC"], (64, 32), [(10, 5, 40, 25)]),
    ("fern", ["BM"], ["SC"], (60, 40), [(5, 5, 35, 30)]),
    ("caladium", ["DC"], ["SC", "OC", "MO"], (50, 50), [(5, 5, 15, 15), (30, 30, 45, 45)]),
    ("mistletoe", ["MQ", "DR"], ["OV"], (200, 50), [(0, 10, 30, 40)]),
]


def build_dataset(root: Path, composition=KNOWN_COMPOSITION, splits=None) -> Path:
    root = Path(root)
    for sub in ("Image", "GT", "Instance"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    images = {}
    categories = sorted({c[0] for c in composition})
    rng = np.random.default_rng(0)
    for i, (cat, strat, vision, (w, h), rects) in enumerate(composition):
        sid = f"img{i:03d}"
        Image.fromarray(rng.integers(0, 255, (h, w, 3), dtype=np.uint8)).save(root / "Image" / f"{sid}.jpg")
        obj = np.zeros((h, w), bool)
        for k, (x0, y0, x1, y1) in enumerate(rects, start=1):
            m = np.zeros((h, w), bool)
            m[y0:y1, x0:x1] = True
            obj |= m
            write_mask(root / "Instance" / f"{sid}_{k}.png", m)
        write_mask(root / "GT" / f"{sid}.png", obj)
        images[sid] = {
            "category": cat,
            "strategy": strat,
            "vision": vision,
            "boxes": [list(r) for r in rects],
            "instances": len(rects),
        }
    ids = sorted(images)
    if splits is None:
        splits = {"train": ids[:-2], "test": ids[-2:]}
    doc = {"schema_version": 1, "categories": categories, "splits": splits, "images": images}
    (root / "annotations.json").write_text(json.dumps(doc, indent=1))
    return root


@pytest.fixture
def known_root(tmp_path):
    return build_dataset(tmp_path / "known")


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    generate_synthetic(seed=0, n=8, size=64, root=root)
    return root


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
