"""Training, evaluation and the ablation matrix."""
from __future__ import annotations

import itertools
import json
import logging
import math
import random
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset

from .config import TrainConfig, _merge, config_from_dict
from .core import ScoreMap
from .dataset import DatasetError, DatasetManifest, load_object_mask, read_image
from .losses import total_loss
from .metrics import AggregateReport, aggregate, evaluate_image
from .model import PCNet, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
CURVE_HEADER = "step,epoch,lr,total,l_e,l_r"
_CACHE_BYTES = 512 * 2**20


class TrainingDiverged(RuntimeError):
    pass


def seed_everything(seed: int, deterministic: bool = False) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)


def to_input(image: np.ndarray, size: int) -> torch.Tensor:
    """uint8 HxWx3 -> normalised 3xSxS float tensor."""
    x = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1).float().div_(255)
    x = F.interpolate(x[None], size=(size, size), mode="bilinear", align_corners=False)[0]
    mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(3, 1, 1)
    return (x - mean) / std


def mask_to_input(mask: np.ndarray, size: int) -> torch.Tensor:
    m = torch.from_numpy(mask.astype(np.float32))[None, None]
    return F.interpolate(m, size=(size, size), mode="nearest-exact")[0]


class SegmentationSet(Dataset):
    """(image, gt, index) triples resized to a square input size."""

    def __init__(self, manifest: DatasetManifest, size: int, cache: Optional[bool] = None):
        self.records = list(manifest)
        self.size = size
        if cache is None:
            cache = len(self.records) * size * size * 16 < _CACHE_BYTES
        self._cache: Optional[dict] = {} if cache else None

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        if self._cache is not None and i in self._cache:
            return self._cache[i]
        rec = self.records[i]
        item = (
            to_input(read_image(rec.image_path), self.size),
            mask_to_input(load_object_mask(rec).values, self.size),
            i,
        )
        if self._cache is not None:
            self._cache[i] = item
        return item


@dataclass
class RunArtifacts:
    checkpoint: Path
    curve_csv: Path
    report: Optional[AggregateReport]
    best_checkpoint: Optional[Path] = None
    best_s_alpha: Optional[float] = None
    steps: int = 0
    seconds: float = 0.0


def train(
    manifest: DatasetManifest,
    cfg: TrainConfig,
    out_dir,
    eval_manifest: Optional[DatasetManifest] = None,
    final_eval: bool = True,
) -> RunArtifacts:
    """Train PCNet on ``manifest``; writes loss_curve.csv, final.pt and best.pt to ``out_dir``.

    Samples without foreground are skipped. ``best.pt`` tracks the best Sα on
    ``eval_manifest`` every ``cfg.eval_every`` epochs.
    """
    t0 = time.perf_counter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_everything(cfg.seed, cfg.deterministic)
    usable = [r.id for r in manifest if r.boxes]
    if not usable:
        raise DatasetError("no training samples with foreground")
    if len(usable) < len(manifest):
        log.info("skipping %d samples with empty ground truth", len(manifest) - len(usable))
    train_set = SegmentationSet(manifest.subset(usable), cfg.input_size)

    model = PCNet(cfg.pcnet)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.MultiStepLR(optimizer, list(cfg.decay_epochs), gamma=cfg.lr_decay)
    loader = DataLoader(
        train_set,
        batch_size=cfg.batch_size,
        shuffle=True,
        num_workers=cfg.workers,
        generator=torch.Generator().manual_seed(cfg.seed),
    )
    aug = torch.Generator().manual_seed(cfg.seed + 1)
    total_steps = cfg.max_steps or cfg.epochs * len(loader)
    n_epochs = math.ceil(total_steps / len(loader))

    curve_path = out_dir / "loss_curve.csv"
    best_path, best_s = None, None
    step = 0
    with open(curve_path, "w") as curve:
        curve.write(CURVE_HEADER + "\n")
        for epoch in range(n_epochs):
            model.train()
            for image, gt, idx in loader:
                if cfg.augmentation == "flip":
                    flip = torch.rand(image.shape[0], generator=aug) < 0.5
                    image = torch.where(flip[:, None, None, None], image.flip(-1), image)
                    gt = torch.where(flip[:, None, None, None], gt.flip(-1), gt)
                terms = total_loss(model(image), gt, cfg.loss)
                if not torch.isfinite(terms.total):
                    ids = [train_set.records[i].id for i in idx.tolist()]
                    (out_dir / "nan_batch.json").write_text(json.dumps({"step": step, "epoch": epoch, "ids": ids}))
                    raise TrainingDiverged(f"non-finite loss at step {step} (epoch {epoch}), batch ids {ids}")
                optimizer.zero_grad(set_to_none=True)
                terms.total.backward()
                optimizer.step()
                step += 1
                lr = optimizer.param_groups[0]["lr"]
                curve.write(f"{step},{epoch},{lr!r},{terms.total.item()!r},{terms.enhance.item()!r},{terms.refine.item()!r}\n")
                if step >= total_steps:
                    break
            scheduler.step()
            log.info("epoch %d done, step %d, loss %.4f", epoch, step, terms.total.item())
            if eval_manifest is not None and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
                s = evaluate(eval_manifest, model, cfg).s_alpha
                if best_s is None or s > best_s:
                    best_s = s
                    best_path = save_checkpoint(out_dir / "best.pt", model, {"epoch": epoch, "step": step, "s_alpha": s})
            if step >= total_steps:
                break

    final = save_checkpoint(out_dir / "final.pt", model, {"epoch": epoch, "step": step})
    report = evaluate(eval_manifest or manifest, model, cfg) if final_eval else None
    return RunArtifacts(final, curve_path, report, best_path, best_s, step, time.perf_counter() - t0)


def read_curve(path) -> dict:
    """Loss curve CSV -> dict of numpy columns."""
    data = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
    return {name: np.asarray(data[name]) for name in data.dtype.names}


def postprocess(prob: np.ndarray) -> ScoreMap:
    """Min-max normalise and quantise to 8 bits, as when maps are saved as PNGs.

    Scoring in-process therefore gives the same numbers as scoring the saved maps.
    """
    lo, hi = float(prob.min()), float(prob.max())
    prob = (prob - lo) / (hi - lo + 1e-8)
    return ScoreMap(np.round(prob * 255) / 255)


@torch.no_grad()
def predict_maps(model: PCNet, manifest: DatasetManifest, input_size: int, iterations=None, batch_size=4):
    """Yield (record, ScoreMap at native resolution) using the final P_ref, postprocessed."""
    model.eval()
    data = SegmentationSet(manifest, input_size, cache=False)
    loader = DataLoader(data, batch_size=batch_size, shuffle=False)
    for image, _, idx in loader:
        probs = torch.sigmoid(model(image, iterations).final)
        for p, i in zip(probs, idx.tolist()):
            rec = data.records[i]
            native = F.interpolate(p[None].double(), size=(rec.height, rec.width), mode="bilinear", align_corners=False)
            yield rec, postprocess(native[0, 0].clamp_(0, 1).numpy())


def evaluate(
    manifest: DatasetManifest,
    model: Union[PCNet, str, Path],
    cfg: Optional[TrainConfig] = None,
    iterations: Optional[int] = None,
    self_test: bool = False,
    save_dir=None,
) -> AggregateReport:
    """Score the final-iteration prediction of every record at native resolution.

    ``model`` may be a checkpoint path. ``self_test`` substitutes the ground
    truth for predictions to check the harness. ``iterations`` overrides the
    number of feedback passes (e.g. 1 on a j=2 checkpoint uses iteration-1 P_ref).
    """
    if not len(manifest):
        raise DatasetError("cannot evaluate an empty manifest")
    if self_test:
        pairs = ((rec, load_object_mask(rec).as_score_map()) for rec in manifest)
    else:
        if not isinstance(model, PCNet):
            model, _ = load_checkpoint(model, expect=cfg.pcnet if cfg else None)
        size = cfg.input_size if cfg else model.config.input_size
        pairs = predict_maps(model, manifest, size, iterations)
    scored = []
    for rec, pred in pairs:
        if save_dir is not None:
            save_score_map(Path(save_dir) / f"{rec.id}.png", pred)
        scored.append((rec, evaluate_image(pred, load_object_mask(rec))))
    return aggregate(scored, slice_by="all")


def save_score_map(path, score: ScoreMap) -> None:
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(score.values * 255).astype(np.uint8)).save(path)


# --------------------------------------------------------------------------
# ablations

AXES = ("components", "iterations", "resolution")
ITERATION_RANGE = (1, 2, 3, 4, 5)


@dataclass
class AblationRow:
    axis: str
    params: dict
    config_digest: str
    report: Optional[AggregateReport] = None

    @property
    def label(self) -> str:
        return " ".join(f"{k}={_fmt(v)}" for k, v in self.params.items())


def _fmt(v):
    if isinstance(v, bool):
        return "on" if v else "off"
    return str(v)


def ablation_variants(base: TrainConfig, axis: str, resolutions: Optional[Sequence[int]] = None) -> List[AblationRow]:
    """Enumerate (row, config) pairs for one ablation axis."""
    if axis == "components":
        updates = [
            ({"EB": eb, "FR": fr, "FB": fb}, {"pcnet": {"enhance_block": eb, "fr_block": fr, "feedback": fb}})
            for eb, fr, fb in itertools.product([False, True], repeat=3)
        ]
    elif axis == "iterations":
        updates = [({"iter": j}, {"pcnet": {"iterations": j}}) for j in ITERATION_RANGE]
    elif axis == "resolution":
        res = resolutions or base.ablation_resolutions
        updates = [({"input_size": r}, {"input_size": r}) for r in res]
    else:
        raise ValueError(f"unknown ablation axis {axis!r}; expected one of {AXES}")
    out = []
    for params, upd in updates:
        cfg = config_from_dict(_merge(base.to_dict(), upd))
        out.append((AblationRow(axis, params, cfg.digest()), cfg))
    return out


def ablation_suite(
    train_manifest: DatasetManifest,
    base_cfg: TrainConfig,
    out_dir,
    eval_manifest: Optional[DatasetManifest] = None,
    axes: Sequence[str] = AXES,
    resolutions: Optional[Sequence[int]] = None,
    runner: Optional[Callable] = None,
) -> Dict[str, List[AblationRow]]:
    """Train and evaluate each variant; one table (list of rows) per axis.

    ``runner(train_manifest, cfg, run_dir, eval_manifest)`` defaults to
    :func:`train` and must return RunArtifacts.
    """
    runner = runner or train
    out_dir = Path(out_dir)
    tables = {}
    for axis in axes:
        rows = []
        for row, cfg in ablation_variants(base_cfg, axis, resolutions):
            run_dir = out_dir / axis / row.label.replace(" ", "_").replace("=", "-")
            log.info("ablation %s: %s", axis, row.label)
            row.report = runner(train_manifest, cfg, run_dir, eval_manifest).report
            rows.append(row)
        tables[axis] = rows
    return tables
