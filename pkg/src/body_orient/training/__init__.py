"""
Toy end-to-end training on synthetic scenes and finite-difference gradient checks.
"""

from .gradcheck import GradcheckResult, gradcheck, loss_gradcheck, run_gradcheck
from .toytrain import LinearHead, TrainConfig, TrainResult, evaluate_head, gen_scene, train

__all__ = [
    "TrainConfig",
    "TrainResult",
    "LinearHead",
    "gen_scene",
    "train",
    "evaluate_head",
    "GradcheckResult",
    "gradcheck",
    "loss_gradcheck",
    "run_gradcheck",
]
