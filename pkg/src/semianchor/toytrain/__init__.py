"""Desk-scale training of the semi-anchored heads on synthetic scenes."""
from .data import SyntheticScene, dataset_summary, default_toy_spec, generate_dataset
from .model import ToyModel, forward
from .train import SGD, TrainConfig, evaluate, objective, static_targets, train, train_step

__all__ = [
    "SGD", "SyntheticScene", "ToyModel", "TrainConfig", "dataset_summary", "default_toy_spec",
    "evaluate", "forward", "generate_dataset", "objective", "static_targets", "train", "train_step",
]
