"""Semi-anchored detection targets, losses, inference and evaluation."""
from .geometry import AnchorGrid, AnchorSpec, Box, build_anchor_grid, iou, pairwise_iou

__version__ = "0.1.0"

__all__ = ["AnchorGrid", "AnchorSpec", "Box", "build_anchor_grid", "iou", "pairwise_iou"]
