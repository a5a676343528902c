"""
Finite-difference gradient checking.

gradcheck() compares an analytic gradient with central differences,

    numeric_i = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps)
    error_i   = |analytic_i - numeric_i| / max(1e-8, |numeric_i|)

and reports the maximum error per output. Coordinates whose analytic
derivative is nonzero but below `min_magnitude` are skipped for that output.
loss_gradcheck() sets the floor to eps = 1e-5: such a derivative moves an
O(1) loss by ~1e-10 across the stencil, and the loss is a sum over many
channels each carrying its own rounding, so cancellation leaves the
difference quotient with too few significant digits for a 1e-4 relative
tolerance. Exact zeros are still compared, so a missing gradient is always
caught. When a `near_kink`
predicate says the point sits on (or within a few eps of) a non-smooth locus,
the point is nudged with small Gaussian noise and the check retried.

loss_gradcheck() applies it to every component of the joint loss on a small
random grid.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.models import Box2D
from ..data.models import AnnotatedInstance
from ..detection.assignment import AssignmentResult, assign
from ..detection.embedding import AnchorSet, GridSpec, RawPrediction
from ..detection.losses import LossOptions, LossWeights, near_nonsmooth, total_loss

logger = logging.getLogger(__name__)

RELATIVE_FLOOR = 1e-8
COMPONENTS = ("l_obj", "l_box", "l_ori", "total")

Value = Union[float, Mapping[str, float]]
Gradient = Union[np.ndarray, Mapping[str, np.ndarray]]
LossFn = Callable[[np.ndarray], Tuple[Value, Gradient]]

# small grid used for checks: 8x8, 4x4, 2x2 and 1x1 cells
CHECK_GRID = GridSpec(input_size=(64, 64), strides=(8, 16, 32, 64))
CHECK_ANCHORS = AnchorSet((
    ((8.0, 16.0), (12.0, 24.0), (16.0, 32.0)),
    ((16.0, 32.0), (24.0, 40.0), (28.0, 56.0)),
    ((32.0, 48.0), (40.0, 64.0), (48.0, 80.0)),
    ((56.0, 72.0), (64.0, 96.0), (80.0, 112.0)),
))


class NonSmoothPointError(ValueError):
    """The checker could not move the point away from a non-smooth locus."""


@dataclass
class GradcheckResult:
    errors: Dict[str, float] = field(default_factory=dict)
    checked: int = 0
    retries: int = 0

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_error < tolerance


def _as_mapping(value, name: str = "value") -> dict:
    return dict(value) if isinstance(value, Mapping) else {name: value}


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(RELATIVE_FLOOR, abs(numeric))


def gradcheck(fn: LossFn, x: np.ndarray, eps: float = 1e-5,
              coords: Optional[Sequence[int]] = None,
              near_kink: Optional[Callable[[np.ndarray], bool]] = None,
              rng: Optional[np.random.Generator] = None, max_retries: int = 10,
              perturbation: float = 1e-2, min_magnitude: float = 0.0) -> GradcheckResult:
    """
    Max relative error between fn's analytic gradient and central differences.

    `fn` maps a flat vector to (value, gradient); both may be dicts keyed by
    output name, in which case every output is checked. `coords` restricts the
    check to a subset of coordinates (all by default).

    Raises:
        NonSmoothPointError: still near a kink after `max_retries` nudges
    """
    rng = rng or np.random.default_rng(0)
    x = np.array(x, dtype=float)
    retries = 0
    while near_kink is not None and near_kink(x):
        if retries >= max_retries:
            raise NonSmoothPointError(f"still near a non-smooth point after {retries} retries")
        retries += 1
        x = x + rng.normal(0.0, perturbation, size=x.shape)
        logger.debug(f"point near a non-smooth locus, retry {retries}")

    value, grad = fn(x)
    grads = {k: np.asarray(v, dtype=float).ravel() for k, v in _as_mapping(grad).items()}
    indices = range(x.size) if coords is None else coords
    errors = {k: 0.0 for k in grads}
    for i in indices:
        step = np.zeros_like(x)
        step.flat[i] = eps
        plus = _as_mapping(fn(x + step)[0])
        minus = _as_mapping(fn(x - step)[0])
        for name, analytic in grads.items():
            if 0.0 < abs(analytic[i]) < min_magnitude:
                continue
            numeric = (plus[name] - minus[name]) / (2.0 * eps)
            errors[name] = max(errors[name], relative_error(analytic[i], numeric))
    return GradcheckResult(errors=errors, checked=len(indices), retries=retries)


def random_instances(rng: np.random.Generator, grid: GridSpec = CHECK_GRID,
                     count: Optional[int] = None) -> List[AnnotatedInstance]:
    """A few persons with centers inside the grid and random orientations."""
    width, height = grid.input_size
    count = int(rng.integers(1, 4)) if count is None else count
    out = []
    for k in range(count):
        h = rng.uniform(16.0, 56.0)
        w = h * rng.uniform(0.35, 0.7)
        out.append(AnnotatedInstance(
            image_id=0, annotation_id=k + 1,
            box=Box2D(rng.uniform(0.1 * width, 0.9 * width), rng.uniform(0.1 * height, 0.9 * height),
                      w, h),
            orientation=float(rng.uniform(0.0, 360.0))))
    return out


def _sample_coords(raw: RawPrediction, matched_flat: List[int], rng: np.random.Generator,
                   limit: int) -> List[int]:
    """Matched-channel coordinates first, topped up with random ones."""
    matched = sorted(set(matched_flat))
    if len(matched) > limit:
        picked = sorted(rng.choice(matched, size=limit, replace=False).tolist())
    else:
        picked = matched
    extra = max(0, limit // 4)
    others = rng.choice(raw.as_vector().size, size=extra, replace=False).tolist()
    return sorted(set(picked) | set(int(i) for i in others))


def _matched_coordinates(raw: RawPrediction, assignment: AssignmentResult) -> List[int]:
    offsets = np.cumsum([0] + [a.size for a in raw.scales])
    coords = []
    for m in assignment.matches:
        gx, gy = m.cell
        base = np.ravel_multi_index((gy, gx, m.anchor, 0), raw.scales[m.scale].shape)
        coords.extend(int(offsets[m.scale] + base + f) for f in range(raw.scales[m.scale].shape[-1]))
    return coords


def loss_gradcheck(seed: int, weights: Optional[LossWeights] = None,
                   options: Optional[LossOptions] = None, grid: GridSpec = CHECK_GRID,
                   anchors: AnchorSet = CHECK_ANCHORS, eps: float = 1e-5,
                   max_coords: int = 40, min_magnitude: float = 1e-5,
                   ratio_threshold: float = 4.0, neighbor_cells: bool = True) -> GradcheckResult:
    """
    Check every loss component at one seeded random point.

    Logits are N(0, 1) so sigmoids stay unsaturated; matched channels are
    always included in the sampled coordinates.
    """
    weights = weights or LossWeights()
    options = options or LossOptions()
    rng = np.random.default_rng(seed)
    gts = random_instances(rng, grid)
    raw = RawPrediction.random(grid, rng)
    assignment = assign(gts, grid, anchors, ratio_threshold=ratio_threshold,
                        neighbor_cells=neighbor_cells)

    def fn(vector: np.ndarray):
        point = raw.like_vector(vector)
        breakdown = total_loss(point, gts, weights, grid, anchors, options, assignment=assignment)
        values = {"l_obj": breakdown.l_obj, "l_box": breakdown.l_box,
                  "l_ori": breakdown.l_ori, "total": breakdown.total}
        grads = {name: breakdown.component_gradients[name].as_vector()
                 for name in ("l_obj", "l_box", "l_ori")}
        grads["total"] = breakdown.gradient.as_vector()
        return values, grads

    def near_kink(vector: np.ndarray) -> bool:
        return near_nonsmooth(raw.like_vector(vector), gts, weights, grid, anchors, options,
                              assignment=assignment)

    coords = _sample_coords(raw, _matched_coordinates(raw, assignment), rng, max_coords)
    return gradcheck(fn, raw.as_vector(), eps=eps, coords=coords, near_kink=near_kink, rng=rng,
                     min_magnitude=min_magnitude)


def run_gradcheck(seeds: int, tolerance: float = 1e-4, first_seed: int = 0,
                  weights: Optional[LossWeights] = None,
                  options: Optional[LossOptions] = None, ratio_threshold: float = 4.0,
                  neighbor_cells: bool = True) -> Tuple[float, Dict[str, float]]:
    """Check `seeds` consecutive seeds; returns (max error, max error per component)."""
    worst = {name: 0.0 for name in COMPONENTS}
    for seed in range(first_seed, first_seed + seeds):
        result = loss_gradcheck(seed, weights, options, ratio_threshold=ratio_threshold,
                                neighbor_cells=neighbor_cells)
        for name, error in result.errors.items():
            worst[name] = max(worst[name], error)
        if not result.passed(tolerance):
            logger.warning(f"seed {seed}: max relative error {result.max_error:.3e}")
    return max(worst.values()), worst
