"""Saliency prediction for 360-degree video via tangent-plane viewports."""

__version__ = "0.1.0"
