"""Value types and pixel-level primitives shared across the package.

Maps are stored row-major as ``(height, width)`` arrays with the origin at the
top-left pixel.  Every type here is immutable after construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

STRATEGY_CODES = ("BM", "DC", "MQ", "DR")
VISION_CODES = ("MO", "SC", "OC", "BO", "SO", "OV")
ATTRIBUTE_CODES = STRATEGY_CODES + VISION_CODES

ATTRIBUTE_NAMES = {
    "BM": "Background matching",
    "DC": "Disruptive coloration",
    "MQ": "Masquerade",
    "DR": "Decoration",
    "MO": "Multiple objects",
    "SC": "Shape complexity",
    "OC": "Occlusion",
    "BO": "Big object",
    "SO": "Small object",
    "OV": "Out-of-view",
}


class MapError(ValueError):
    """Raised for malformed score maps, masks or boxes."""


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


class ScoreMap:
    """Per-pixel confidence map with values in [0, 1]."""

    __slots__ = ("_values",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim != 2:
            raise MapError(f"score map must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise MapError(f"score map must be at least 1x1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise MapError("score map contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise MapError(
                f"score map values must lie in [0, 1], got range [{arr.min()}, {arr.max()}]"
            )
        self._values = _frozen(arr)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def shape(self) -> tuple[int, int]:
        return self._values.shape

    @property
    def height(self) -> int:
        return self._values.shape[0]

    @property
    def width(self) -> int:
        return self._values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ScoreMap):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._values, other._values)

    def __repr__(self):
        return f"ScoreMap({self.height}x{self.width}, mean={self._values.mean():.4f})"


class BinaryMask:
    """Ground-truth style mask with values in {0, 1}."""

    __slots__ = ("_values",)

    def __init__(self, values):
        arr = np.asarray(values)
        if arr.ndim != 2:
            raise MapError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise MapError(f"mask must be at least 1x1, got shape {arr.shape}")
        if arr.dtype != np.bool_:
            if not np.all((arr == 0) | (arr == 1)):
                raise MapError("mask values must be strictly binary (0 or 1)")
            arr = arr == 1
        self._values = _frozen(np.array(arr, dtype=bool))

    @property
    def values(self) -> np.ndarray:
        """Boolean view of the mask."""
        return self._values

    @property
    def shape(self) -> tuple[int, int]:
        return self._values.shape

    @property
    def height(self) -> int:
        return self._values.shape[0]

    @property
    def width(self) -> int:
        return self._values.shape[1]

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self._values))

    def as_float(self) -> np.ndarray:
        return self._values.astype(np.float64)

    def as_score_map(self) -> ScoreMap:
        return ScoreMap(self.as_float())

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._values, other._values)

    def __repr__(self):
        return f"BinaryMask({self.height}x{self.width}, area={self.area})"


@dataclass(frozen=True)
class BoundingBox:
    """Pixel box, inclusive at the minimum and exclusive at the maximum."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise MapError(f"degenerate bounding box {self.as_list()}")
        if self.x_min < 0 or self.y_min < 0:
            raise MapError(f"bounding box has negative coordinates {self.as_list()}")

    def validate_within(self, height: int, width: int) -> None:
        if self.x_max > width or self.y_max > height:
            raise MapError(
                f"bounding box {self.as_list()} exceeds image bounds {width}x{height}"
            )

    @classmethod
    def from_mask(cls, mask: Union[BinaryMask, np.ndarray]) -> "BoundingBox":
        """Tightest box around the foreground pixels of ``mask``."""
        values = mask.values if isinstance(mask, BinaryMask) else np.asarray(mask, bool)
        ys, xs = np.nonzero(values)
        if ys.size == 0:
            raise MapError("cannot bound an empty mask")
        return cls(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)

    def as_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class AttributeSet:
    """Camouflage-strategy and visual-challenge codes attached to one image."""

    strategy: frozenset
    vision: frozenset

    def __init__(self, strategy: Iterable[str] = (), vision: Iterable[str] = ()):
        strategy = frozenset(strategy)
        vision = frozenset(vision)
        unknown = (strategy - set(STRATEGY_CODES)) | (vision - set(VISION_CODES))
        if unknown:
            raise MapError(f"unknown attribute code(s): {sorted(unknown)}")
        if not strategy:
            raise MapError("an annotated sample needs at least one strategy code")
        object.__setattr__(self, "strategy", strategy)
        object.__setattr__(self, "vision", vision)

    @property
    def codes(self) -> frozenset:
        return self.strategy | self.vision

    def __contains__(self, code: str) -> bool:
        return code in self.strategy or code in self.vision

    def to_dict(self) -> dict:
        return {
            "strategy": [c for c in STRATEGY_CODES if c in self.strategy],
            "vision": [c for c in VISION_CODES if c in self.vision],
        }


def _as_array(map_) -> np.ndarray:
    if isinstance(map_, (ScoreMap, BinaryMask)):
        return map_.values
    return np.asarray(map_)


def adaptive_threshold(map_: Union[ScoreMap, np.ndarray]) -> float:
    """Twice the mean score, capped at 1."""
    values = _as_array(map_).astype(np.float64, copy=False)
    return float(min(2.0 * values.mean(), 1.0))


def binarize(map_: Union[ScoreMap, np.ndarray], t: float) -> BinaryMask:
    """Foreground where the score is strictly greater than ``t``.

    Strict comparison means ``t = 1.0`` always yields an empty mask.
    """
    if not 0.0 <= t <= 1.0:
        raise MapError(f"threshold must lie in [0, 1], got {t}")
    return BinaryMask(_as_array(map_) > t)


def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Linear interpolation weights with half-pixel centres and edge clamping."""
    weights = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        weights[i, lo] += 1.0 - frac
        weights[i, hi] += frac
    return weights


def _nearest_index(n_out: int, n_in: int) -> np.ndarray:
    idx = np.floor((np.arange(n_out) + 0.5) * n_in / n_out).astype(int)
    return np.minimum(idx, n_in - 1)


def resize_map(map_, h: int, w: int, mode: str = "bilinear"):
    """Resize a ScoreMap or BinaryMask to ``(h, w)``.

    Bilinear resampling uses half-pixel centres (the OpenCV / ``align_corners=False``
    convention).  Masks only accept nearest-neighbour resampling so they stay binary.
    """
    if h < 1 or w < 1:
        raise MapError(f"target size must be positive, got {h}x{w}")
    if mode not in ("bilinear", "nearest"):
        raise MapError(f"unknown resize mode {mode!r}")
    if isinstance(map_, BinaryMask):
        if mode != "nearest":
            raise MapError("binary masks can only be resized with mode='nearest'")
    elif not isinstance(map_, ScoreMap):
        raise TypeError(f"expected ScoreMap or BinaryMask, got {type(map_).__name__}")

    src = map_.values
    if src.shape == (h, w):
        return map_
    if mode == "nearest":
        out = src[np.ix_(_nearest_index(h, src.shape[0]), _nearest_index(w, src.shape[1]))]
        return type(map_)(out)
    out = _interp_matrix(h, src.shape[0]) @ src @ _interp_matrix(w, src.shape[1]).T
    return ScoreMap(np.clip(out, 0.0, 1.0))
