"""
Tests for the finite-difference gradient checker and the loss gradients it verifies.
"""

import numpy as np
import pytest

from body_orient.core.geometry import CIoUResult, ciou_with_grad
from body_orient.detection.factory import (CIoUObjectnessTarget, IoUObjectnessTarget,
                                           SquaredWrappedDistance)
from body_orient.detection.losses import LossOptions, LossWeights
from body_orient.training.gradcheck import (NonSmoothPointError, gradcheck, loss_gradcheck,
                                            relative_error, run_gradcheck)


class TestChecker:
    """gradcheck() on functions with known gradients"""

    def test_quadratic(self):
        matrix = np.array([[3.0, 1.0], [1.0, 2.0]])

        def fn(x):
            return 0.5 * x @ matrix @ x, matrix @ x

        result = gradcheck(fn, np.array([0.7, -1.3]))
        assert result.max_error < 1e-7
        assert result.checked == 2

    def test_detects_wrong_gradient(self):
        def fn(x):
            return float(np.sum(x ** 2)), 3.0 * x

        assert not gradcheck(fn, np.array([1.0, 2.0])).passed()

    def test_multiple_outputs(self):
        def fn(x):
            return {"a": float(x[0] ** 3), "b": float(np.sin(x[1]))}, \
                {"a": np.array([3 * x[0] ** 2, 0.0]), "b": np.array([0.0, np.cos(x[1])])}

        result = gradcheck(fn, np.array([0.4, 1.1]))
        assert set(result.errors) == {"a", "b"}
        assert result.passed(1e-8)

    def test_kink_retries_then_gives_up(self):
        def fn(x):
            return float(abs(x[0])), np.sign(x)

        with pytest.raises(NonSmoothPointError):
            gradcheck(fn, np.array([0.0]), near_kink=lambda x: True, max_retries=3)

    def test_kink_nudge(self):
        def fn(x):
            return float(abs(x[0])), np.sign(x)

        result = gradcheck(fn, np.array([0.0]), near_kink=lambda x: abs(x[0]) < 1e-3,
                           rng=np.random.default_rng(0))
        assert result.retries >= 1
        assert result.passed()

    def test_relative_error_floor(self):
        assert relative_error(1e-9, 0.0) == pytest.approx(0.1)
        assert relative_error(2.0, 1.0) == 1.0


class TestWrapBranches:
    """Orientation distance on either side of the branch switch"""

    @pytest.mark.parametrize("gap", [0.49, 0.51])
    def test_each_side_passes(self, gap):
        distance = SquaredWrappedDistance()
        target = np.array([0.2])

        def fn(x):
            pred = 0.2 + x
            value, grad = distance.value_and_grad(pred, target)
            return float(value[0]), grad

        assert gradcheck(fn, np.array([gap])).max_error < 1e-6


class TestLossGradients:
    """Every loss component against central differences"""

    @pytest.mark.parametrize("seed", range(10))
    def test_seed(self, seed):
        result = loss_gradcheck(seed)
        assert set(result.errors) == {"l_obj", "l_box", "l_ori", "total"}
        assert result.passed(1e-4), result.errors

    @pytest.mark.parametrize("options", [
        LossOptions(orientation_distance="absolute"),
        LossOptions(normalization="sum"),
        LossOptions(objectness_iou="iou"),
    ])
    def test_variants(self, options):
        for seed in range(3):
            assert loss_gradcheck(seed, LossWeights(tau=0.0), options).passed(1e-4)

    @pytest.mark.slow
    def test_hundred_seeds(self):
        worst, per_component = run_gradcheck(100, 1e-4)
        assert worst < 1e-4
        assert set(per_component) == {"l_obj", "l_box", "l_ori", "total"}

    def test_single_cell_assignment(self):
        for seed in range(3):
            assert loss_gradcheck(seed, neighbor_cells=False, ratio_threshold=2.0).passed(1e-4)


class TestObjectnessKinks:
    """Clamp boundaries of the objectness target"""

    @staticmethod
    def _overlap(quality, grad):
        grad = np.array([grad], dtype=float)
        return CIoUResult(ciou=np.array([quality]), iou=np.array([quality]),
                          ciou_grad=grad, iou_grad=grad)

    def test_disjoint_boxes_are_smooth_for_iou(self):
        overlap = ciou_with_grad(np.array([[0.0, 0.0, 2.0, 2.0]]),
                                 np.array([[10.0, 10.0, 2.0, 2.0]]))
        assert overlap.iou[0] == 0.0
        assert not IoUObjectnessTarget().near_kink(overlap, 1e-5)[0]

    def test_iou_flags_perfect_overlap(self):
        box = np.array([[5.0, 5.0, 2.0, 4.0]])
        assert IoUObjectnessTarget().near_kink(ciou_with_grad(box, box), 1e-5)[0]

    def test_ciou_flags_zero_only_when_crossing(self):
        target = CIoUObjectnessTarget()
        assert target.near_kink(self._overlap(1e-7, [0.2, 0.0, 0.0, 0.0]), 1e-5)[0]
        assert not target.near_kink(self._overlap(1e-7, [0.0, 0.0, 0.0, 0.0]), 1e-5)[0]
        assert not target.near_kink(self._overlap(0.5, [0.2, 0.0, 0.0, 0.0]), 1e-5)[0]


class TestMagnitudeFloor:
    """Derivatives below min_magnitude are skipped, exact zeros are not"""

    def test_tiny_derivative_skipped(self):
        def fn(x):
            # analytic derivative off by 50 %
            return float(1e-7 * x[0]), np.array([1.5e-7])

        assert not gradcheck(fn, np.array([0.3])).passed()
        assert gradcheck(fn, np.array([0.3]), min_magnitude=1e-5).passed()

    def test_missing_gradient_still_caught(self):
        def fn(x):
            return float(np.sum(x ** 2)), np.zeros_like(x)

        assert not gradcheck(fn, np.array([0.5]), min_magnitude=1e-5).passed()
