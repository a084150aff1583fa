from .augment import augment_swap, reverse_delta
from .losses import combined_loss, cos_dist, mae_loss
from .schedule import lr_at
from .trainer import TrainConfig, TrainHistory, evaluate_loss, load_params, train

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "augment_swap",
    "combined_loss",
    "cos_dist",
    "evaluate_loss",
    "load_params",
    "lr_at",
    "mae_loss",
    "reverse_delta",
    "train",
]
