"""Double-uncertainty weighted mean-teacher semi-supervised segmentation (desk scale)."""

__version__ = "0.1.0"
