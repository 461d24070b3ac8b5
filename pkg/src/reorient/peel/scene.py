"""Synthetic depth scenes of superellipsoids with analytic ground truth.

A pinhole camera ray-casts the implicit surface |x/a|^p + |y/b|^p +
|z/c|^p = 1 posed in the world. The generator returns the depth image,
mask, and the analytic surface so every later pipeline stage can be
checked against ground truth.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    # world-from-camera rigid transform
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if min(self.fx, self.fy) <= 0:
            raise ValueError("intrinsics must be positive")
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)


@dataclass
class DepthScene:
    depth: np.ndarray        # (H, W) meters, 0 where no hit
    mask: np.ndarray         # (H, W) bool
    camera: Camera

    def __post_init__(self):
        if np.any(self.mask & (self.depth <= 0)):
            raise ValueError("masked pixels must carry positive depth")


@dataclass
class Superellipsoid:
    semi_axes: tuple         # (a, b, c) meters
    exponent: float = 2.0
    # world-from-object rigid transform
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)

    def implicit(self, points):
        """F(p) - 1 for world points; zero on the surface."""
        local = (np.asarray(points, float) - self.translation) \
            @ self.rotation
        scaled = np.abs(local / np.asarray(self.semi_axes))
        return (scaled ** self.exponent).sum(axis=-1) - 1.0

    def surface_distance(self, points):
        """Approximate unsigned distance to the surface (radial scaling)."""
        local = (np.asarray(points, float) - self.translation) \
            @ self.rotation
        r = np.linalg.norm(local, axis=-1)
        scaled = np.abs(local / np.asarray(self.semi_axes))
        f = (scaled ** self.exponent).sum(axis=-1)
        # radial scale factor putting the point on the surface
        with np.errstate(divide="ignore"):
            k = f ** (-1.0 / self.exponent)
        return np.abs(r * (1.0 - k))

    @property
    def principal_axis_world(self):
        order = np.argsort(self.semi_axes)[::-1]
        return self.rotation[:, order[0]].copy()


def render_synthetic(shape, camera, n_bracket=128, n_bisect=48):
    """Ray-cast the shape; returns a DepthScene.

    Depth is the camera-frame z coordinate of the first hit (matching
    the pinhole back-projection convention). Raises ValueError when the
    shape is not visible.
    """
    H, W = camera.height, camera.width
    u = np.arange(W) - camera.cx
    v = np.arange(H) - camera.cy
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack([uu / camera.fx, vv / camera.fy,
                      np.ones_like(uu, dtype=float)], axis=-1)
    d_world = d_cam @ camera.rotation.T
    origin = camera.translation

    # bracket the first crossing by sampling along a generous interval
    radius = float(np.linalg.norm(shape.semi_axes))
    center_t = float((shape.translation - origin)
                     @ camera.rotation[:, 2])
    t0 = max(center_t - 2.0 * radius, 1e-6)
    t1 = center_t + 2.0 * radius
    ts = np.linspace(t0, t1, n_bracket)
    flat_d = d_world.reshape(-1, 3)
    vals = np.stack([shape.implicit(origin + t * flat_d) for t in ts])
    inside = vals < 0.0
    first = inside.argmax(axis=0)                 # 0 if never inside
    hit = inside.any(axis=0) & (first > 0)
    lo = ts[np.maximum(first - 1, 0)]
    hi = ts[first]
    # bisect between the last outside and first inside sample
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        f = shape.implicit(origin + mid[:, None] * flat_d)
        take = f < 0.0
        hi = np.where(take, mid, hi)
        lo = np.where(take, lo, mid)
    t_hit = 0.5 * (lo + hi)
    depth = np.where(hit, t_hit, 0.0).reshape(H, W)
    mask = hit.reshape(H, W)
    if not mask.any():
        raise ValueError("shape is not visible to the camera")
    return DepthScene(depth=depth, mask=mask, camera=camera)
