"""
Ground-truth annotations: instance models, letterboxing and dataset reconstruction.

Prediction files live in `data.formats` (not re-exported here, it depends on
the detection package).
"""

from .dataset import (PersonAnnotations, ReconstructedDataset, load_merged_gts,
                      load_orientation_labels, load_person_annotations, reconstruct,
                      write_merged)
from .letterbox import Letterbox, letterbox_transform
from .models import AnnotatedInstance, DatasetStats, InstanceSource

__all__ = [
    "AnnotatedInstance",
    "DatasetStats",
    "InstanceSource",
    "Letterbox",
    "letterbox_transform",
    "PersonAnnotations",
    "ReconstructedDataset",
    "load_person_annotations",
    "load_orientation_labels",
    "reconstruct",
    "write_merged",
    "load_merged_gts",
]
