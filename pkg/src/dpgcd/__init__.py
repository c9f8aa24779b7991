"""Depth-prior-guided cross-modal 2D/3D change detection on a from-scratch autodiff core."""

__version__ = "0.1.0"
