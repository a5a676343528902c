"""
Desk-scale Toy Training

Replaces the convolutional backbone with planted-linear features so the
assign -> decode -> loss -> gradient pipeline can be trained end to end on a
laptop:

- gen_scene(): 1-5 synthetic persons per scene; every cell's 21 planted
  values are the ideal logits of its 3 anchor channels (zero where a channel
  is not positive); features = P @ planted + Gaussian noise
- LinearHead: one F x 7 weight matrix and bias per anchor, shared over cells
  and scales
- train(): deterministic (mini-)batch gradient descent on the joint loss
- evaluate_head(): held-out scenes -> postprocess -> metrics.evaluate()

Everything is seeded through numpy SeedSequence, so two runs with the same
configuration produce bit-identical heads and histories.

=== WHY PLANTED FEATURES? ===
A linear head on planted features can represent the ideal logits exactly,
so any gap between the trained head and a perfect detector is down to the
loss and its gradients, not to model capacity:

    features = planted @ P.T + noise    (P = gain * Q, Q has orthonormal columns)
    ideal head  W = Q / gain             ->  features @ W == planted (noise aside)

=== WHY A CONSTANT OBJECTNESS TARGET DURING TRAINING? ===
The positive BCE target is the box quality. Early on every objectness logit
is negative, and differentiating through the target then pushes boxes *away*
from their GT to lower the target. Training treats the target as a constant
(`detach_objectness_target`); the reported loss values are identical either
way and the gradient checker still verifies the full derivative.

=== HELD-OUT AP ===
AP ranks every detection, so held-out AP is computed from detections above
the low `ap_conf_thresh`; Recall and the orientation metrics keep using
`conf_thresh`.
"""

import json
import logging
import zipfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import DEFAULT_CONFIG
from ..core.geometry import iou
from ..core.models import Box2D, ConfigError, NonFiniteLogitError, TrainingDivergedError
from ..data.models import AnnotatedInstance
from ..detection.assignment import AssignmentResult, assign
from ..detection.embedding import (ANCHORS_PER_SCALE, NUM_FIELDS, AnchorSet, GridSpec,
                                   RawPrediction, invert)
from ..detection.losses import (LossOptions, LossWeights, batch_index, batch_loss,
                                loss_settings_from_config)
from ..detection.postprocess import SCORE_MODES, Detection, postprocess
from ..evaluation.metrics import EvalReport, evaluate

logger = logging.getLogger(__name__)

PLANTED_DIM = ANCHORS_PER_SCALE * NUM_FIELDS
SPLITS = {"train": 0, "eval": 1}
PROJECTION_STREAM = 7
# TrainConfig fields read from other config sections
CONFIG_SECTIONS = {"ratio_threshold": "grid", "neighbor_cells": "grid", "score_mode": "postprocess"}


@dataclass(frozen=True)
class TrainConfig:
    """Toy-training settings; validated on construction."""
    seed: int = 42
    steps: int = 1000
    lr: float = 0.5
    batch_size: int = 200
    train_scenes: int = 200
    eval_scenes: int = 50
    noise_sigma: float = 0.05
    feature_dim: int = 32
    projection_gain: float = 2.0
    positive_logit: float = 4.0
    min_persons: int = 1
    max_persons: int = 5
    min_height: float = 24.0
    max_height: float = 160.0
    min_aspect: float = 0.35
    max_aspect: float = 0.6
    max_overlap: float = 0.3
    smoothing_window: int = 50
    log_every: int = 100
    grid: GridSpec = field(default_factory=lambda: GridSpec.from_config(DEFAULT_CONFIG["train"]))
    anchors: AnchorSet = field(
        default_factory=lambda: AnchorSet.from_config(DEFAULT_CONFIG["train"]["anchors"]))
    weights: LossWeights = field(default_factory=LossWeights)
    options: LossOptions = field(default_factory=LossOptions)
    detach_objectness_target: bool = True
    ratio_threshold: float = 4.0
    neighbor_cells: bool = True
    conf_thresh: float = 0.25
    ap_conf_thresh: float = 0.05
    score_mode: str = "objectness"
    nms_iou: float = 0.45
    eval_iou: float = 0.5

    def __post_init__(self):
        checks = [
            ("steps", self.steps > 0),
            ("lr", self.lr > 0),
            ("train_scenes", self.train_scenes > 0),
            ("batch_size", 0 < self.batch_size <= self.train_scenes),
            ("eval_scenes", self.eval_scenes >= 0),
            ("noise_sigma", self.noise_sigma >= 0),
            ("feature_dim", self.feature_dim >= PLANTED_DIM),
            ("projection_gain", self.projection_gain > 0),
            ("min_persons", 1 <= self.min_persons <= self.max_persons),
            ("min_height", 0 < self.min_height <= self.max_height),
            ("max_height", self.max_height < min(self.grid.input_size)),
            ("min_aspect", 0 < self.min_aspect <= self.max_aspect),
            ("max_aspect", self.max_height * self.max_aspect < min(self.grid.input_size)),
            ("max_overlap", 0 < self.max_overlap <= 1),
            ("smoothing_window", self.smoothing_window >= 1),
            ("log_every", self.log_every >= 1),
            ("ratio_threshold", self.ratio_threshold > 1.0),
            ("ap_conf_thresh", 0.0 <= self.ap_conf_thresh <= 1.0),
            ("score_mode", self.score_mode in SCORE_MODES),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"invalid train setting {name}={getattr(self, name)}",
                                  key=f"{CONFIG_SECTIONS.get(name, 'train')}.{name}")

    @classmethod
    def from_config(cls, config: Optional[Dict[str, Any]] = None) -> "TrainConfig":
        """Build from a full config dict (see config.load_config)."""
        config = config or DEFAULT_CONFIG
        train = config["train"]
        weights, options = loss_settings_from_config(config["loss"])
        plain = {k: v for k, v in train.items() if k not in ("input_size", "strides", "anchors")}
        return cls(
            grid=GridSpec.from_config(train),
            anchors=AnchorSet.from_config(train["anchors"]),
            weights=weights,
            options=options,
            conf_thresh=float(config["postprocess"]["conf_thresh"]),
            nms_iou=float(config["postprocess"]["iou_thresh"]),
            score_mode=config["postprocess"]["score_mode"],
            ratio_threshold=float(config["grid"]["ratio_threshold"]),
            neighbor_cells=bool(config["grid"]["neighbor_cells"]),
            eval_iou=float(config["evaluation"]["iou_thresh"]),
            **plain,
        )

    def with_tau(self, tau: float) -> "TrainConfig":
        return replace(self, weights=replace(self.weights, tau=tau))

    def with_lam(self, lam: float) -> "TrainConfig":
        return replace(self, weights=replace(self.weights, lam=lam))

    @property
    def training_options(self) -> LossOptions:
        return replace(self.options, detach_objectness_target=self.detach_objectness_target)


@dataclass
class SyntheticScene:
    """Persons plus per-scale planted targets (grid_h, grid_w, 21) and features (..., F)."""
    image_id: int
    gts: List[AnnotatedInstance]
    assignment: AssignmentResult
    targets: List[np.ndarray]
    features: List[np.ndarray]


@dataclass
class StepRecord:
    step: int
    l_obj: float
    l_box: float
    l_ori: float
    total: float
    orientation_contributors: int = 0
    max_objectness: float = 0.0  # over positive channels

    def to_dict(self) -> Dict[str, float]:
        return {"step": self.step, "l_obj": self.l_obj, "l_box": self.l_box,
                "l_ori": self.l_ori, "total": self.total,
                "orientation_contributors": self.orientation_contributors,
                "max_objectness": self.max_objectness}


@dataclass
class LinearHead:
    """Per-anchor linear map from cell features to the 7 raw logits."""
    weight: np.ndarray  # (3, F, 7)
    bias: np.ndarray    # (3, 7)

    @classmethod
    def zeros(cls, feature_dim: int) -> "LinearHead":
        return cls(np.zeros((ANCHORS_PER_SCALE, feature_dim, NUM_FIELDS)),
                   np.zeros((ANCHORS_PER_SCALE, NUM_FIELDS)))

    @property
    def feature_dim(self) -> int:
        return self.weight.shape[1]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias)))

    def _flat(self) -> np.ndarray:
        return self.weight.transpose(1, 0, 2).reshape(self.feature_dim, PLANTED_DIM)

    def forward(self, features: Sequence[np.ndarray]) -> RawPrediction:
        """Features (..., grid_h, grid_w, F) per scale -> logits (..., grid_h, grid_w, 3, 7)."""
        flat = self._flat()
        out = []
        for feats in features:
            lead = feats.shape[:-1]
            logits = (feats.reshape(-1, self.feature_dim) @ flat).reshape(
                lead + (ANCHORS_PER_SCALE, NUM_FIELDS))
            logits += self.bias
            out.append(logits)
        return RawPrediction(out)

    def backward(self, features: Sequence[np.ndarray],
                 gradient: RawPrediction) -> Tuple[np.ndarray, np.ndarray]:
        """Chain rule through forward(): (d weight, d bias)."""
        d_flat = np.zeros((self.feature_dim, PLANTED_DIM))
        d_bias = np.zeros(PLANTED_DIM)
        for feats, grad in zip(features, gradient.scales):
            rows = grad.reshape(-1, PLANTED_DIM)
            d_flat += feats.reshape(-1, self.feature_dim).T @ rows
            d_bias += rows.sum(axis=0)
        d_weight = d_flat.reshape(self.feature_dim, ANCHORS_PER_SCALE, NUM_FIELDS).transpose(1, 0, 2)
        return d_weight, d_bias.reshape(ANCHORS_PER_SCALE, NUM_FIELDS)

    def updated(self, d_weight: np.ndarray, d_bias: np.ndarray, lr: float) -> "LinearHead":
        return LinearHead(self.weight - lr * d_weight, self.bias - lr * d_bias)

    def save(self, path: Path) -> None:
        """npz archive readable by np.load; fixed timestamps keep the bytes stable."""
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
            for name, array in (("weight", self.weight), ("bias", self.bias)):
                info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
                with archive.open(info, "w") as handle:
                    np.lib.format.write_array(handle, np.ascontiguousarray(array),
                                              allow_pickle=False)

    @classmethod
    def load(cls, path: Path) -> "LinearHead":
        with np.load(path, allow_pickle=False) as archive:
            return cls(archive["weight"].copy(), archive["bias"].copy())


@dataclass
class TrainResult:
    head: LinearHead
    history: List[StepRecord]
    config: TrainConfig


def scene_seed(seed: int, index: int, split: str = "train") -> int:
    """Independent 32-bit seed for scene `index` of a split."""
    return int(np.random.SeedSequence([seed, SPLITS[split], index]).generate_state(1)[0])


def projection_matrix(config: TrainConfig) -> np.ndarray:
    """Fixed F x 21 projection: gain times a matrix with orthonormal columns."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, PROJECTION_STREAM]))
    q, r = np.linalg.qr(rng.normal(size=(config.feature_dim, PLANTED_DIM)))
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return config.projection_gain * q * signs


def sample_persons(rng: np.random.Generator, config: TrainConfig,
                   image_id: int = 0) -> List[AnnotatedInstance]:
    """Non-degenerate, inside-the-frame persons with uniform orientations."""
    width, height = config.grid.input_size
    count = int(rng.integers(config.min_persons, config.max_persons + 1))
    persons: List[AnnotatedInstance] = []
    attempts = 0
    while len(persons) < count and attempts < 50 * count:
        attempts += 1
        h = rng.uniform(config.min_height, config.max_height)
        w = h * rng.uniform(config.min_aspect, config.max_aspect)
        box = Box2D(rng.uniform(w / 2, width - w / 2), rng.uniform(h / 2, height - h / 2), w, h)
        if any(iou(box, p.box) > config.max_overlap for p in persons):
            continue
        persons.append(AnnotatedInstance(image_id=image_id, annotation_id=len(persons) + 1,
                                         box=box, orientation=float(rng.uniform(0.0, 360.0))))
    return persons


def planted_targets(assignment: AssignmentResult, config: TrainConfig) -> List[np.ndarray]:
    """Ideal logits of every positive channel, zero elsewhere."""
    grid, anchors = config.grid, config.anchors
    targets = []
    for scale in range(grid.num_scales):
        grid_w, grid_h = grid.grid_dims(scale)
        targets.append(np.zeros((grid_h, grid_w, PLANTED_DIM)))
    for m in assignment.matches:
        gx, gy = m.cell
        start = m.anchor * NUM_FIELDS
        targets[m.scale][gy, gx, start:start + NUM_FIELDS] = invert(
            m.target, m.scale, m.cell, m.anchor, grid, anchors,
            objectness_logit=config.positive_logit)
    return targets


def gen_scene(seed: int, config: TrainConfig, image_id: int = 0,
              projection: Optional[np.ndarray] = None) -> SyntheticScene:
    """Persons, assignment, planted targets and noisy features of one scene."""
    if projection is None:
        projection = projection_matrix(config)
    rng = np.random.default_rng(seed)
    gts = sample_persons(rng, config, image_id)
    assignment = assign(gts, config.grid, config.anchors, ratio_threshold=config.ratio_threshold,
                        neighbor_cells=config.neighbor_cells)
    targets = planted_targets(assignment, config)
    features = []
    for planted in targets:
        noise = rng.normal(0.0, config.noise_sigma, size=planted.shape[:2] + (config.feature_dim,))
        features.append(planted @ projection.T + noise)
    return SyntheticScene(image_id=image_id, gts=gts, assignment=assignment,
                          targets=targets, features=features)


def gen_scenes(config: TrainConfig, count: int, split: str = "train") -> List[SyntheticScene]:
    projection = projection_matrix(config)
    return [gen_scene(scene_seed(config.seed, i, split), config, image_id=i, projection=projection)
            for i in range(count)]


def train(config: TrainConfig, scenes: Optional[List[SyntheticScene]] = None) -> TrainResult:
    """
    Gradient descent of the joint loss w.r.t. a zero-initialised LinearHead.

    Batches are consecutive slices of the training scenes visited in a fixed
    cycle; with batch_size == train_scenes every step is full-batch. The loss
    uses `config.training_options`, i.e. the objectness target is held
    constant unless `detach_objectness_target` is off.

    Raises:
        TrainingDivergedError: logits or loss became non-finite
    """
    if scenes is None:
        scenes = gen_scenes(config, config.train_scenes, "train")
    grid, anchors = config.grid, config.anchors
    batches = []
    for start in range(0, len(scenes), config.batch_size):
        rows = scenes[start:start + config.batch_size]
        feats = [np.stack([s.features[k] for s in rows]) for k in range(grid.num_scales)]
        assignments = [s.assignment for s in rows]
        batches.append((feats, [s.gts for s in rows], assignments,
                        batch_index(assignments, grid, anchors)))
    logger.info(f"Training toy head: {len(scenes)} scenes, {len(batches)} batch(es), "
                f"{config.steps} steps, lr={config.lr}")

    options = config.training_options
    head = LinearHead.zeros(config.feature_dim)
    history: List[StepRecord] = []
    for step in range(config.steps):
        feats, gts, assignments, index = batches[step % len(batches)]
        if not head.is_finite():
            raise TrainingDivergedError(step, float("nan"))
        try:
            breakdown = batch_loss(head.forward(feats), gts, config.weights, grid, anchors,
                                   options, assignments=assignments, index=index)
        except NonFiniteLogitError as exc:
            raise TrainingDivergedError(step, float("nan")) from exc
        if not np.isfinite(breakdown.total):
            raise TrainingDivergedError(step, breakdown.total)
        history.append(StepRecord(step, breakdown.l_obj, breakdown.l_box, breakdown.l_ori,
                                  breakdown.total, breakdown.orientation_contributors,
                                  breakdown.max_positive_objectness))
        if step % config.log_every == 0 or step == config.steps - 1:
            logger.info(f"step {step}: total={breakdown.total:.6f} obj={breakdown.l_obj:.6f} "
                        f"box={breakdown.l_box:.6f} ori={breakdown.l_ori:.6f}")
        d_weight, d_bias = head.backward(feats, breakdown.gradient)
        head = head.updated(d_weight, d_bias, config.lr)
    return TrainResult(head=head, history=history, config=config)


def detect(head: LinearHead, scene: SyntheticScene, config: TrainConfig,
           conf_thresh: Optional[float] = None) -> List[Detection]:
    """Head output of one scene through postprocess() with the configured score mode."""
    return postprocess(head.forward(scene.features), config.grid, config.anchors,
                       conf_thresh=config.conf_thresh if conf_thresh is None else conf_thresh,
                       iou_thresh=config.nms_iou, score_mode=config.score_mode,
                       image_id=scene.image_id)


def evaluate_head(head: LinearHead, config: TrainConfig,
                  scenes: Optional[List[SyntheticScene]] = None) -> EvalReport:
    """
    Held-out evaluation through postprocess() and metrics.evaluate().

    Detections down to min(ap_conf_thresh, conf_thresh) feed AP; Recall and
    orientation metrics only count those above conf_thresh.
    """
    if scenes is None:
        scenes = gen_scenes(config, config.eval_scenes, "eval")
    floor = min(config.ap_conf_thresh, config.conf_thresh)
    detections, gts = [], []
    for scene in scenes:
        detections.extend(detect(head, scene, config, conf_thresh=floor))
        gts.extend(scene.gts)
    return evaluate(detections, gts, iou_thresh=config.eval_iou, conf_thresh=config.conf_thresh)


def smooth(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average ('valid' part only)."""
    values = np.asarray(values, dtype=float)
    if values.size <= window:
        return np.array([values.mean()]) if values.size else values
    return np.convolve(values, np.ones(window) / window, mode="valid")


def is_non_increasing(values: Sequence[float], tolerance: float = 1e-12) -> bool:
    return bool(np.all(np.diff(np.asarray(values, dtype=float)) <= tolerance))


def final_loss(history: Sequence[StepRecord], component: str = "total", window: int = 1) -> float:
    """Mean of `component` over the last `window` steps."""
    tail = history[-window:]
    return float(np.mean([getattr(record, component) for record in tail]))


def sweep_tau(config: TrainConfig, taus: Sequence[float]) -> Dict[float, float]:
    """Final (window-averaged) orientation loss per tau under a common seed."""
    out = {}
    for tau in taus:
        result = train(config.with_tau(tau))
        out[tau] = final_loss(result.history, "l_ori", config.smoothing_window)
        logger.info(f"tau={tau}: final orientation loss {out[tau]:.6f}")
    return out


def sweep_lambda(config: TrainConfig, lams: Sequence[float]) -> Dict[float, EvalReport]:
    """Held-out report per orientation weight lam under a common seed."""
    out = {}
    for lam in lams:
        lam_config = config.with_lam(lam)
        out[lam] = evaluate_head(train(lam_config).head, lam_config)
        logger.info(f"lam={lam}: AP50={out[lam].ap50} MAE={out[lam].mae_degrees}")
    return out


def write_history(history: Sequence[StepRecord], path: Path) -> None:
    """JSON Lines, one record per step."""
    with open(path, "w", encoding="utf-8") as handle:
        for record in history:
            handle.write(json.dumps(record.to_dict()) + "\n")
