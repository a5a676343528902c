"""
Configuration for body_orient.

This file contains every default (grid geometry, anchors, loss weights,
thresholds, toy-training settings) as plain dictionaries that can be
overridden from a YAML file without changing the code.

Override order: defaults < YAML file (--config or $BODY_ORIENT_CONFIG) < CLI flags.
Unknown keys are rejected so a typo never silently falls back to a default.
"""

import copy
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .core.models import ConfigError

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "BODY_ORIENT_CONFIG"


# ============================================================================
# GRID / ANCHOR GEOMETRY
# ============================================================================

GRID_CONFIG = {
    "input_size": [1024, 1024],  # width, height after letterboxing
    "strides": [8, 16, 32, 64],
    # Four-scale presets of the reference detector family, (w, h) in pixels
    "anchors": [
        [[19, 27], [44, 40], [38, 94]],
        [[96, 68], [86, 152], [180, 137]],
        [[140, 301], [303, 264], [238, 542]],
        [[436, 615], [739, 380], [925, 792]],
    ],
    "ratio_threshold": 4.0,  # max(gt/anchor, anchor/gt) must stay below this
    "neighbor_cells": True,  # also assign the two nearest neighbour cells
}


# ============================================================================
# LOSS WEIGHTS
# ============================================================================

LOSS_CONFIG = {
    "alpha": 0.7,   # objectness
    "beta": 0.05,   # box
    "lam": 0.05,    # orientation
    "tau": 0.2,     # objectness tolerance threshold for the orientation loss
    "orientation_distance": "squared",    # squared | absolute
    "normalization": "per_scale_mean",    # per_scale_mean | sum
    "objectness_iou": "ciou",             # ciou | iou
}


# ============================================================================
# POSTPROCESSING AND EVALUATION
# ============================================================================

POSTPROCESS_CONFIG = {
    "conf_thresh": 0.25,
    "iou_thresh": 0.45,
    "score_mode": "objectness",  # objectness | objectness_x_class
}

EVAL_CONFIG = {
    "iou_thresh": 0.5,
    "conf_thresh": 0.25,  # only used for Recall
    "exclude_weak": False,
}

# Screen convention used when drawing orientation arrows
ORIENTATION_CONVENTION = {
    "zero_direction": "up",  # up | right | down | left
    "clockwise": True,
}


# ============================================================================
# TOY TRAINING
# ============================================================================

TRAIN_CONFIG = {
    "seed": 42,
    "steps": 1000,
    "lr": 0.5,
    "batch_size": 200,       # == train_scenes means full-batch descent
    "train_scenes": 200,
    "eval_scenes": 50,
    "noise_sigma": 0.05,
    "feature_dim": 32,
    "projection_gain": 2.0,  # features = gain * Q @ target with Q orthonormal
    "positive_logit": 4.0,
    "min_persons": 1,
    "max_persons": 5,
    "min_height": 24.0,
    "max_height": 160.0,
    "min_aspect": 0.35,      # width / height
    "max_aspect": 0.6,
    "max_overlap": 0.3,      # resample a person overlapping another by more IoU
    "smoothing_window": 50,
    "log_every": 100,
    "detach_objectness_target": True,  # BCE target treated as a constant while training
    "ap_conf_thresh": 0.05,  # held-out AP counts detections down to this score
    "input_size": [192, 192],
    "strides": [8, 16, 32, 64],
    "anchors": [
        [[10, 20], [14, 30], [20, 40]],
        [[24, 48], [30, 64], [40, 80]],
        [[48, 96], [60, 120], [72, 150]],
        [[84, 170], [100, 190], [120, 220]],
    ],
}


# ============================================================================
# DATA SOURCES
# ============================================================================

DOWNLOAD_CONFIG = {
    "rate_limit": 2.0,   # requests per second
    "timeout": 600,
    "max_retries": 3,
    "chunk_size": 1 << 20,
}

DATASET_URLS = {
    "coco2017_annotations": "http://images.cocodataset.org/annotations/annotations_trainval2017.zip",
}


DEFAULT_CONFIG: Dict[str, Any] = {
    "grid": GRID_CONFIG,
    "loss": LOSS_CONFIG,
    "postprocess": POSTPROCESS_CONFIG,
    "evaluation": EVAL_CONFIG,
    "convention": ORIENTATION_CONVENTION,
    "train": TRAIN_CONFIG,
    "download": DOWNLOAD_CONFIG,
}


def _merge(base: Dict[str, Any], override: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {dotted}", key=dotted)
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {dotted} must be a mapping", key=dotted)
            merged[key] = _merge(base[key], value, prefix=f"{dotted}.")
        else:
            merged[key] = value
    return merged


def resolve_config_path(flag: Optional[str] = None) -> Optional[Path]:
    """The --config flag wins over the environment variable."""
    value = flag or os.environ.get(CONFIG_ENV_VAR)
    return Path(value) if value else None


def load_config(path: Optional[Path] = None) -> Dict[str, Any]:
    """
    Load the YAML config at `path` merged over DEFAULT_CONFIG.

    Raises:
        ConfigError: unreadable YAML, non-mapping document or unknown key
    """
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = yaml.safe_load(handle) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    logger.debug(f"Loaded config overrides from {path}: {sorted(document)}")
    return _merge(DEFAULT_CONFIG, document)
