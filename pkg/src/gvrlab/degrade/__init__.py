"""Artifact synthesis for training conditions: flow-driven blending and blur."""

from .flow import MotionMask, estimate_clip_flow, estimate_flow, motion_mask, pyramid_levels, to_gray
from .synth import (
    BlurKernelSpec,
    EllipseSpec,
    FlowDegradeParams,
    blend_colors,
    degrade_clip,
    degrade_frame,
    ellipse_color,
    motion_blur,
    sample_ellipses,
)

__all__ = [
    "BlurKernelSpec",
    "EllipseSpec",
    "FlowDegradeParams",
    "MotionMask",
    "blend_colors",
    "degrade_clip",
    "degrade_frame",
    "ellipse_color",
    "estimate_clip_flow",
    "estimate_flow",
    "motion_blur",
    "motion_mask",
    "pyramid_levels",
    "sample_ellipses",
    "to_gray",
]
