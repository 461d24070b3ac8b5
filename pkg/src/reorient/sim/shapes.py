"""Convex object cross-sections: ellipses and superellipses.

Shapes are discretized to counter-clockwise convex polygons for contact,
but keep their analytic parameters so oracles (arc length, surface
distance) can work against the smooth curve.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ObjectSpec:
    """A rigid convex object: perimeter polygon plus bulk properties."""

    vertices: np.ndarray          # (M, 2) CCW, object frame, meters
    mass: float                   # kg
    inertia: float                # kg m^2, about the centroid
    friction: float = 0.8
    kind: str = "ellipse"         # analytic family for oracles
    a: float = 0.0                # semi-axis x
    b: float = 0.0                # semi-axis y
    exponent: float = 2.0         # superellipse exponent (2 = ellipse)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        if len(self.vertices) < 8:
            raise ValueError("perimeter polygon needs >= 8 vertices")
        if polygon_area(self.vertices) <= 0:
            raise ValueError("polygon must be counter-clockwise")
        if not is_convex_ccw(self.vertices):
            raise ValueError("polygon must be convex")
        if self.inertia <= 0:
            raise ValueError("inertia must be positive")
        # cached edge geometry for contact queries
        nxt = np.roll(self.vertices, -1, axis=0)
        edge = nxt - self.vertices
        nrm = np.stack([edge[:, 1], -edge[:, 0]], axis=1)
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        self.edge_normals = nrm
        self.edge_offsets = np.einsum("ij,ij->i", nrm, self.vertices)

    @property
    def minor_radius(self):
        return min(self.a, self.b) if self.a > 0 else \
            np.abs(self.vertices).min()


def polygon_area(verts):
    nxt = np.roll(verts, -1, axis=0)
    return 0.5 * np.sum(verts[:, 0] * nxt[:, 1] - nxt[:, 0] * verts[:, 1])


def is_convex_ccw(verts):
    nxt = np.roll(verts, -1, axis=0)
    edge = nxt - verts
    cross = edge[:, 0] * np.roll(edge, -1, axis=0)[:, 1] \
        - edge[:, 1] * np.roll(edge, -1, axis=0)[:, 0]
    return np.all(cross > -1e-12)


def polygon_inertia(verts, mass):
    """Second moment about the origin for a uniform polygon of given mass."""
    nxt = np.roll(verts, -1, axis=0)
    cross = verts[:, 0] * nxt[:, 1] - nxt[:, 0] * verts[:, 1]
    area = 0.5 * np.sum(cross)
    j = np.sum(cross * (np.einsum("ij,ij->i", verts, verts)
                        + np.einsum("ij,ij->i", verts, nxt)
                        + np.einsum("ij,ij->i", nxt, nxt))) / 12.0
    return mass * j / area


def superellipse_points(a, b, p, n):
    """CCW polygon approximating |x/a|^p + |y/b|^p = 1."""
    t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    c, s = np.cos(t), np.sin(t)
    x = a * np.sign(c) * np.abs(c) ** (2.0 / p)
    y = b * np.sign(s) * np.abs(s) ** (2.0 / p)
    return np.stack([x, y], axis=1)


def make_shape(a, b, mass, exponent=2.0, friction=0.8, n_vertices=24):
    verts = superellipse_points(a, b, exponent, n_vertices)
    kind = "ellipse" if exponent == 2.0 else "superellipse"
    return ObjectSpec(vertices=verts, mass=mass,
                      inertia=polygon_inertia(verts, mass),
                      friction=friction, kind=kind, a=a, b=b,
                      exponent=exponent)


def shape_catalog(base_shapes=None, n_variants=10, mass=0.3, friction=0.8):
    """Size variants of each base cross-section (n_variants per shape)."""
    if base_shapes is None:
        base_shapes = [(0.034, 0.030, 2.0), (0.036, 0.027, 2.0),
                       (0.033, 0.029, 2.5)]
    scales = np.linspace(0.85, 1.15, n_variants)
    catalog = []
    for a, b, p in base_shapes:
        for s in scales:
            catalog.append(make_shape(a * s, b * s, mass=mass, exponent=p,
                                      friction=friction))
    return catalog
