"""
Unified Embedding Codec

Every anchor channel of every grid cell emits seven raw logits
(p, x, y, w, h, c, o). Decoding squashes them into one embedding holding
objectness, a pixel-space box, a class score and a unit orientation:

    p, c, o   = sigmoid(logit)
    center    = (2 * sigmoid(t_xy) - 0.5 + (gx, gy)) * stride
    size      = (2 * sigmoid(t_wh)) ** 2 * anchor_wh

so a channel can only describe boxes whose center lies within (-0.5, 1.5)
cells of its own cell and whose size is within (0, 4) times its anchor.

Cells are addressed (gx, gy) = (column, row). Raw arrays of one scale have
shape (grid_h, grid_w, 3, 7) and are indexed [gy, gx, anchor, field].
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.models import (Box2D, ConfigError, NonFiniteLogitError,
                           UnrepresentableTargetError)
from ..data.models import AnnotatedInstance

NUM_FIELDS = 7
ANCHORS_PER_SCALE = 3
NUM_SCALES = 4

# field positions inside one embedding
P, X, Y, W, H, C, O = range(NUM_FIELDS)

Cell = Tuple[int, int]


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class GridSpec:
    """Multi-scale grid geometry; grid dims per scale = input_size / stride."""
    input_size: Tuple[int, int] = (1024, 1024)
    strides: Tuple[int, ...] = (8, 16, 32, 64)

    def __post_init__(self):
        width, height = self.input_size
        if len(self.strides) != NUM_SCALES:
            raise ConfigError(f"grid needs exactly {NUM_SCALES} strides, got {list(self.strides)}",
                              key="grid.strides")
        if any(s <= 0 for s in self.strides) or list(self.strides) != sorted(self.strides):
            raise ConfigError("strides must be positive and increasing", key="grid.strides")
        largest = max(self.strides)
        if width <= 0 or height <= 0 or width % largest or height % largest:
            raise ConfigError(
                f"input size {width}x{height} must be divisible by the largest stride {largest}",
                key="grid.input_size")

    @property
    def num_scales(self) -> int:
        return len(self.strides)

    def grid_dims(self, scale: int) -> Tuple[int, int]:
        """(grid_w, grid_h) of one scale."""
        stride = self.strides[scale]
        return (self.input_size[0] // stride, self.input_size[1] // stride)

    def scale_shape(self, scale: int) -> Tuple[int, int, int, int]:
        grid_w, grid_h = self.grid_dims(scale)
        return (grid_h, grid_w, ANCHORS_PER_SCALE, NUM_FIELDS)

    def num_predictions(self) -> int:
        total = 0
        for scale in range(self.num_scales):
            grid_w, grid_h = self.grid_dims(scale)
            total += grid_w * grid_h * ANCHORS_PER_SCALE
        return total

    @classmethod
    def from_config(cls, grid_config: Dict[str, Any]) -> "GridSpec":
        size = grid_config["input_size"]
        if not isinstance(size, (list, tuple)) or len(size) != 2:
            raise ConfigError("input_size must be [width, height]", key="grid.input_size")
        return cls(input_size=(int(size[0]), int(size[1])),
                   strides=tuple(int(s) for s in grid_config["strides"]))


@dataclass(frozen=True)
class AnchorSet:
    """Three (w, h) anchor shapes per scale, in pixels."""
    anchors: Tuple[Tuple[Tuple[float, float], ...], ...]

    def __post_init__(self):
        if len(self.anchors) != NUM_SCALES:
            raise ConfigError(f"need anchors for {NUM_SCALES} scales, got {len(self.anchors)}",
                              key="grid.anchors")
        for scale_anchors in self.anchors:
            if len(scale_anchors) != ANCHORS_PER_SCALE:
                raise ConfigError(f"each scale needs exactly {ANCHORS_PER_SCALE} anchors",
                                  key="grid.anchors")
            for w, h in scale_anchors:
                if not (w > 0 and h > 0):
                    raise ConfigError(f"anchor dims must be positive, got ({w}, {h})",
                                      key="grid.anchors")

    def shape(self, scale: int, anchor: int) -> Tuple[float, float]:
        return self.anchors[scale][anchor]

    def as_array(self, scale: int) -> np.ndarray:
        """(3, 2) array of (w, h)."""
        return np.asarray(self.anchors[scale], dtype=float)

    @classmethod
    def from_config(cls, anchors: Sequence[Sequence[Sequence[float]]]) -> "AnchorSet":
        try:
            return cls(tuple(tuple((float(w), float(h)) for w, h in scale) for scale in anchors))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed anchors: {exc}", key="grid.anchors") from exc


@dataclass
class RawPrediction:
    """Raw head output: one (grid_h, grid_w, 3, 7) logit array per scale."""
    scales: List[np.ndarray]

    @classmethod
    def zeros(cls, grid: GridSpec) -> "RawPrediction":
        return cls([np.zeros(grid.scale_shape(s)) for s in range(grid.num_scales)])

    @classmethod
    def random(cls, grid: GridSpec, rng: np.random.Generator, std: float = 1.0) -> "RawPrediction":
        return cls([rng.normal(0.0, std, size=grid.scale_shape(s)) for s in range(grid.num_scales)])

    def validate(self, grid: GridSpec) -> None:
        if len(self.scales) != grid.num_scales:
            raise ValueError(f"expected {grid.num_scales} scales, got {len(self.scales)}")
        for s, array in enumerate(self.scales):
            if array.shape != grid.scale_shape(s):
                raise ValueError(f"scale {s}: expected shape {grid.scale_shape(s)}, got {array.shape}")
            if not np.all(np.isfinite(array)):
                raise NonFiniteLogitError(f"scale {s} contains non-finite logits")

    def copy(self) -> "RawPrediction":
        return RawPrediction([a.copy() for a in self.scales])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.scales])

    def like_vector(self, vector: np.ndarray) -> "RawPrediction":
        """Reshape a flat vector into this prediction's per-scale layout."""
        out, start = [], 0
        for array in self.scales:
            out.append(np.asarray(vector[start:start + array.size], dtype=float).reshape(array.shape))
            start += array.size
        return RawPrediction(out)


@dataclass(frozen=True)
class UnifiedEmbedding:
    """Decoded prediction of one anchor channel."""
    objectness: float
    box: Box2D
    class_score: float
    orientation: float  # unit angle in (0, 1)

    @property
    def degrees(self) -> float:
        return self.orientation * 360.0


@dataclass
class DecodedScale:
    """Vectorized decode of one scale: leading dims (grid_h, grid_w, 3)."""
    objectness: np.ndarray
    boxes: np.ndarray        # (..., 4) cx, cy, w, h in input pixels
    class_score: np.ndarray
    orientation: np.ndarray  # unit angle


@dataclass(frozen=True)
class EncodedTarget:
    """Ground truth stored alongside the channel that must reproduce it."""
    box: Box2D
    orientation: float       # unit angle in [0, 1)
    objectness: float = 1.0


def decode_scale(raw_scale: np.ndarray, scale: int, grid: GridSpec, anchors: AnchorSet) -> DecodedScale:
    """Decode every channel of one scale at once."""
    if not np.all(np.isfinite(raw_scale)):
        raise NonFiniteLogitError(f"scale {scale} contains non-finite logits")
    stride = grid.strides[scale]
    grid_h, grid_w = raw_scale.shape[:2]
    gy, gx = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
    squashed = sigmoid(raw_scale)
    anchor_wh = anchors.as_array(scale)[None, None, :, :]
    cx = (2.0 * squashed[..., X] - 0.5 + gx[..., None]) * stride
    cy = (2.0 * squashed[..., Y] - 0.5 + gy[..., None]) * stride
    wh = (2.0 * squashed[..., W:H + 1]) ** 2 * anchor_wh
    boxes = np.concatenate([cx[..., None], cy[..., None], wh], axis=-1)
    return DecodedScale(objectness=squashed[..., P], boxes=boxes,
                        class_score=squashed[..., C], orientation=squashed[..., O])


def decode_channels(logits: np.ndarray, cells: np.ndarray, stride: float,
                    anchor_wh: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Decode selected channels and return (squashed (N, 7), boxes (N, 4)).

    `cells` is (N, 2) of (gx, gy); `anchor_wh` is (N, 2).
    """
    squashed = sigmoid(logits)
    centers = (2.0 * squashed[:, X:Y + 1] - 0.5 + cells) * stride
    sizes = (2.0 * squashed[:, W:H + 1]) ** 2 * anchor_wh
    return squashed, np.concatenate([centers, sizes], axis=1)


def box_jacobian(squashed: np.ndarray, stride: float, anchor_wh: np.ndarray) -> np.ndarray:
    """d(cx, cy, w, h)/d(t_x, t_y, t_w, t_h) for selected channels (diagonal, (N, 4))."""
    sig = squashed[:, X:H + 1]
    jac = np.empty_like(sig)
    jac[:, 0:2] = 2.0 * stride * sig[:, 0:2] * (1.0 - sig[:, 0:2])
    jac[:, 2:4] = 8.0 * anchor_wh * sig[:, 2:4] ** 2 * (1.0 - sig[:, 2:4])
    return jac


def decode(raw: RawPrediction, scale: int, cell: Cell, anchor: int,
           grid: GridSpec, anchors: AnchorSet) -> UnifiedEmbedding:
    """Decode the embedding emitted by one (scale, cell, anchor) channel."""
    gx, gy = cell
    logits = np.asarray(raw.scales[scale][gy, gx, anchor], dtype=float)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteLogitError(f"non-finite logits at scale {scale} cell {cell} anchor {anchor}")
    squashed, boxes = decode_channels(
        logits[None, :], np.array([[gx, gy]], dtype=float),
        grid.strides[scale], np.asarray([anchors.shape(scale, anchor)], dtype=float))
    cx, cy, w, h = boxes[0]
    return UnifiedEmbedding(objectness=float(squashed[0, P]), box=Box2D(cx, cy, w, h),
                            class_score=float(squashed[0, C]), orientation=float(squashed[0, O]))


def representable(box: Box2D, scale: int, cell: Cell, anchor: int,
                  grid: GridSpec, anchors: AnchorSet) -> bool:
    """True when some finite logits at this channel decode exactly to `box`."""
    stride = grid.strides[scale]
    gx, gy = cell
    offset_x = box.cx / stride - gx
    offset_y = box.cy / stride - gy
    anchor_w, anchor_h = anchors.shape(scale, anchor)
    return (-0.5 < offset_x < 1.5 and -0.5 < offset_y < 1.5
            and 0.0 < box.w / anchor_w < 4.0 and 0.0 < box.h / anchor_h < 4.0)


def encode_target(gt: AnnotatedInstance, scale: int, cell: Cell, anchor: int,
                  grid: GridSpec, anchors: AnchorSet) -> EncodedTarget:
    """
    Build the training target for a ground truth at one channel.

    Raises:
        UnrepresentableTargetError: the channel cannot decode to this box
    """
    if not representable(gt.box, scale, cell, anchor, grid, anchors):
        raise UnrepresentableTargetError(
            f"gt {gt.key} box {gt.box} cannot be decoded at scale {scale} cell {cell} anchor {anchor}")
    return EncodedTarget(box=gt.box, orientation=gt.unit_orientation, objectness=1.0)


def invert(target: EncodedTarget, scale: int, cell: Cell, anchor: int,
           grid: GridSpec, anchors: AnchorSet, objectness_logit: float = 10.0,
           orientation_clip: float = 1e-6) -> np.ndarray:
    """
    Finite logits whose decode reproduces `target` (the argmin of the box
    and orientation losses). Orientation is clipped into the open unit
    interval because the sigmoid never reaches 0 or 1.
    """
    if not representable(target.box, scale, cell, anchor, grid, anchors):
        raise UnrepresentableTargetError(
            f"target {target.box} cannot be decoded at scale {scale} cell {cell} anchor {anchor}")
    stride = grid.strides[scale]
    gx, gy = cell
    anchor_w, anchor_h = anchors.shape(scale, anchor)
    sig_x = (target.box.cx / stride - gx + 0.5) / 2.0
    sig_y = (target.box.cy / stride - gy + 0.5) / 2.0
    sig_w = np.sqrt(target.box.w / anchor_w) / 2.0
    sig_h = np.sqrt(target.box.h / anchor_h) / 2.0
    orientation = float(np.clip(target.orientation, orientation_clip, 1.0 - orientation_clip))
    out = np.empty(NUM_FIELDS)
    out[P] = objectness_logit
    out[X:H + 1] = logit(np.array([sig_x, sig_y, sig_w, sig_h]))
    out[C] = objectness_logit
    out[O] = float(logit(orientation))
    return out


def default_grid(grid_config: Optional[Dict[str, Any]] = None) -> Tuple[GridSpec, AnchorSet]:
    """GridSpec + AnchorSet from a `grid` config section (package defaults if None)."""
    if grid_config is None:
        from ..config import GRID_CONFIG
        grid_config = GRID_CONFIG
    return GridSpec.from_config(grid_config), AnchorSet.from_config(grid_config["anchors"])
