"""Peel trajectory pipeline: point cloud to spaced waypoints.

Steps: back-project the masked depth image, find the principal axis by
PCA, slice a 2 cm segment about the central plane, fit a smoothing
spline to the projected profile, and emit evenly spaced waypoints with
a fixed tool orientation.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import make_smoothing_spline
from scipy.spatial.transform import Rotation

WORLD_UP = np.array([0.0, 0.0, 1.0])


class InsufficientPoints(ValueError):
    """Too few points to continue the pipeline."""


class DegenerateAxis(ValueError):
    """Point cloud has no distinct longest axis (sphere-like)."""


class DegenerateFit(ValueError):
    """Profile points do not span an abscissa interval."""


@dataclass
class PointCloud:
    points: np.ndarray       # (N, 3) world frame, meters

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if len(self.points) < 1:
            raise ValueError("point cloud must contain at least one point")
        if not np.isfinite(self.points).all():
            raise ValueError("point cloud must be finite")


@dataclass
class PeelTrajectory:
    waypoints: np.ndarray    # (K, 3) meters, ordered along the axis
    orientation: np.ndarray  # unit quaternion (w, x, y, z), fixed
    spacing: float           # nominal waypoint spacing, meters

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float)
        self.orientation = np.asarray(self.orientation, dtype=float)
        if abs(np.linalg.norm(self.orientation) - 1.0) > 1e-9:
            raise ValueError("orientation must be a unit quaternion")
        if len(self.waypoints) >= 2:
            gaps = np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)
            if gaps.max() > 1.2 * self.spacing \
                    or gaps.min() < 0.8 * self.spacing:
                raise ValueError("waypoint spacing outside 20% of nominal")


def backproject(scene):
    """Masked depth pixels to a world-frame point cloud."""
    vs, us = np.nonzero(scene.mask)
    if len(us) < 50:
        raise InsufficientPoints("mask has %d pixels, need >= 50" % len(us))
    cam = scene.camera
    z = scene.depth[vs, us]
    pts_cam = np.stack([(us - cam.cx) / cam.fx * z,
                        (vs - cam.cy) / cam.fy * z, z], axis=1)
    return PointCloud(pts_cam @ cam.rotation.T + cam.translation)


def principal_axis(cloud, degenerate_tol=0.01):
    """Largest-variance direction of the cloud and its centroid.

    Sign convention: positive projection on world x, tie-broken by y
    then z. Raises DegenerateAxis when the top two eigenvalues are
    within `degenerate_tol` of each other (no distinct longest axis).
    """
    pts = cloud.points
    if len(pts) < 3:
        raise InsufficientPoints("need at least 3 points")
    centroid = pts.mean(axis=0)
    cov = np.cov((pts - centroid).T)
    evals, evecs = np.linalg.eigh(cov)
    if evals[-1] <= 0 or not np.isfinite(evals).all():
        raise InsufficientPoints("points are coincident")
    if (evals[-1] - evals[-2]) / evals[-1] < degenerate_tol:
        raise DegenerateAxis(
            "top eigenvalues %.3g and %.3g are too close"
            % (evals[-1], evals[-2]))
    axis = evecs[:, -1]
    for k in range(3):
        if abs(axis[k]) > 1e-12:
            if axis[k] < 0:
                axis = -axis
            break
    return axis, centroid


def _plane_frame(axis, up=WORLD_UP):
    """In-plane up vector and plane normal for the central plane."""
    v = up - (up @ axis) * axis
    norm = np.linalg.norm(v)
    if norm < 1e-9:
        raise DegenerateAxis("axis is parallel to the up direction")
    v = v / norm
    n = np.cross(axis, v)
    return v, n / np.linalg.norm(n)


def slice_and_project(cloud, axis, centroid, thickness=0.02, up=WORLD_UP):
    """Central 2 cm slab projected to (along-axis, along-up) coordinates."""
    v, n = _plane_frame(axis, up)
    rel = cloud.points - centroid
    keep = np.abs(rel @ n) <= thickness / 2.0
    if keep.sum() < 10:
        raise InsufficientPoints("only %d points in the slice"
                                 % int(keep.sum()))
    kept = rel[keep]
    return np.stack([kept @ axis, kept @ v], axis=1)


@dataclass
class ProfileCurve:
    spline: object           # height as a function of the axis coordinate
    x_min: float
    x_max: float
    rms_residual: float

    def __call__(self, x):
        return self.spline(x)


def fit_spline(points2d, smoothing=1e-6):
    """Cubic smoothing spline through the projected profile.

    Points are sorted by the along-axis coordinate; duplicate abscissae
    are averaged. Raises DegenerateFit when all points share one
    abscissa.
    """
    pts = np.asarray(points2d, dtype=float)
    if len(pts) < 4:
        raise InsufficientPoints("need at least 4 points to fit")
    order = np.argsort(pts[:, 0])
    x, y = pts[order, 0], pts[order, 1]
    ux, inverse = np.unique(x, return_inverse=True)
    if len(ux) < 2:
        raise DegenerateFit("all points share one abscissa")
    uy = np.bincount(inverse, weights=y) / np.bincount(inverse)
    if len(ux) < 4:
        raise InsufficientPoints("need 4 distinct abscissae")
    spline = make_smoothing_spline(ux, uy, lam=smoothing)
    rms = float(np.sqrt(np.mean((spline(ux) - uy) ** 2)))
    return ProfileCurve(spline=spline, x_min=float(ux[0]),
                        x_max=float(ux[-1]), rms_residual=rms)


def _fixed_tool_orientation(axis, v, n):
    """Tool frame: x along the stroke, z pressing down into the surface."""
    m = np.column_stack([axis, n, -v])
    q = Rotation.from_matrix(m).as_quat()      # (x, y, z, w)
    return np.array([q[3], q[0], q[1], q[2]])  # (w, x, y, z)


def emit_trajectory(curve, axis, centroid, step=0.005, up=WORLD_UP,
                    n_dense=2000):
    """Evenly spaced waypoints along the fitted profile, lifted to 3D."""
    v, n = _plane_frame(axis, up)
    span = curve.x_max - curve.x_min
    if span < 2 * step:
        raise ValueError("fitted curve spans less than two steps")
    xs = np.linspace(curve.x_min, curve.x_max, n_dense)
    ys = curve(xs)
    seg = np.sqrt(np.diff(xs) ** 2 + np.diff(ys) ** 2)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    n_pts = int(np.floor(arc[-1] / step)) + 1
    targets = np.arange(n_pts) * step
    x_w = np.interp(targets, arc, xs)
    y_w = np.interp(targets, arc, ys)
    waypoints = centroid + x_w[:, None] * axis + y_w[:, None] * v
    return PeelTrajectory(waypoints=waypoints,
                          orientation=_fixed_tool_orientation(axis, v, n),
                          spacing=step)


def peel_pipeline(scene, thickness=0.02, smoothing=1e-6, step=0.005):
    """Full pipeline from a depth scene to the peel trajectory."""
    cloud = backproject(scene)
    axis, centroid = principal_axis(cloud)
    pts2d = slice_and_project(cloud, axis, centroid, thickness=thickness)
    curve = fit_spline(pts2d, smoothing=smoothing)
    return emit_trajectory(curve, axis, centroid, step=step)
