from .metrics import (EvalReport, average_precision, ap_coco, evaluate, match,
                      orientation_metrics, recall)

__all__ = ["EvalReport", "evaluate", "match", "orientation_metrics", "average_precision",
           "ap_coco", "recall"]
