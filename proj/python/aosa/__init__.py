"""Flow-adaptive occlusion saliency for video classifiers.

The heavy lifting lives in the compiled extension; this package re-exports
its public surface. Videos are float32 arrays shaped (T, H, W, C) and
saliency maps are float64 arrays shaped (T, H, W).
"""

from ._aosa import (
    ExternalModel,
    IoError,
    ModelError,
    ProtocolError,
    ScoreModel,
    Tiny3DCNN,
    ValidationError,
    compute_map,
    deletion_auc,
    direction_sample,
    insertion_auc,
    load_map,
    load_video,
    random_saliency,
    save_map,
    save_video,
    spt_score,
    train_toy,
)

__all__ = [
    "ExternalModel",
    "IoError",
    "ModelError",
    "ProtocolError",
    "ScoreModel",
    "Tiny3DCNN",
    "ValidationError",
    "compute_map",
    "deletion_auc",
    "direction_sample",
    "insertion_auc",
    "load_map",
    "load_video",
    "random_saliency",
    "save_map",
    "save_video",
    "spt_score",
    "train_toy",
]
