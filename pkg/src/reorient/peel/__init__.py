from .scene import Camera, DepthScene, Superellipsoid, render_synthetic
from .pipeline import (
    DegenerateAxis, DegenerateFit, InsufficientPoints, PeelTrajectory,
    PointCloud, ProfileCurve, backproject, emit_trajectory, fit_spline,
    peel_pipeline, principal_axis, slice_and_project,
)
from . import io

__all__ = [
    "Camera", "DepthScene", "Superellipsoid", "render_synthetic",
    "DegenerateAxis", "DegenerateFit", "InsufficientPoints",
    "PeelTrajectory", "PointCloud", "ProfileCurve",
    "backproject", "emit_trajectory", "fit_spline", "peel_pipeline",
    "principal_axis", "slice_and_project", "io",
]
