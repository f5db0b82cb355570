"""Few-shot conditioned keypoint tracking: geometry, rendering, models and training."""

__version__ = "0.1.0"
