"""
body_orient: joint multi-person body detection and orientation estimation.

Subpackages:
    core        boxes, angles, box geometry
    data        annotation models, dataset reconstruction, file formats
    detection   embedding codec, assignment, losses, postprocessing
    evaluation  MAE / Acc-X / AP / Recall
    training    toy end-to-end training and gradient checks
"""

__version__ = "0.1.0"
