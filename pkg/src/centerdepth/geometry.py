"""Pinhole projection, cuboid construction and the 2D-to-3D center relation.

Conventions (KITTI camera frame): x right, y down, z forward. A cuboid's
``location`` is the center of its bottom face, so its volumetric center is
``location + (0, -h/2, 0)``. "Depth" always means camera-frame Z, never the
homogeneous scale of the projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kitti_io import CameraCalibration

EPS_W = 1e-12
EPS_DET = 1e-12


class GeometryError(ValueError):
    """Degenerate projection or back-projection."""


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class Cuboid3D:
    location: tuple[float, float, float]
    dimensions: tuple[float, float, float]  # h, w, l
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "location", tuple(float(v) for v in self.location))
        object.__setattr__(self, "dimensions", tuple(float(v) for v in self.dimensions))
        if min(self.dimensions) <= 0:
            raise GeometryError(f"cuboid dimensions must be positive: {self.dimensions}")
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @classmethod
    def from_label(cls, label) -> "Cuboid3D":
        return cls(label.location, label.dimensions, label.rotation_y)

    @property
    def volume(self) -> float:
        h, w, l = self.dimensions
        return h * w * l


@dataclass(frozen=True)
class CenterPair:
    c2d: tuple[float, float]
    c3d: tuple[float, float]

    @property
    def offset(self) -> tuple[float, float]:
        return (self.c3d[0] - self.c2d[0], self.c3d[1] - self.c2d[1])


def project(calib: CameraCalibration, point) -> tuple[float, float]:
    X, Y, Z = point
    P = calib.P
    p = (X, Y, Z, 1.0)
    w = P[2, 0] * p[0] + P[2, 1] * p[1] + P[2, 2] * p[2] + P[2, 3]
    if abs(w) < EPS_W:
        raise GeometryError(f"degenerate projection: homogeneous scale {w!r}")
    u = (P[0, 0] * p[0] + P[0, 1] * p[1] + P[0, 2] * p[2] + P[0, 3]) / w
    v = (P[1, 0] * p[0] + P[1, 1] * p[1] + P[1, 2] * p[2] + P[1, 3]) / w
    return (float(u), float(v))


def project_points(calib: CameraCalibration, points: np.ndarray) -> np.ndarray:
    """Vectorised :func:`project` for an (N, 3) array; returns (N, 2)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    hom = np.hstack([pts, np.ones((len(pts), 1))]) @ calib.P.T
    w = hom[:, 2]
    if np.any(np.abs(w) < EPS_W):
        raise GeometryError("degenerate projection: homogeneous scale near zero")
    return hom[:, :2] / w[:, None]


def backproject(calib: CameraCalibration, pixel, depth: float) -> tuple[float, float, float]:
    """Recover (X, Y, Z) from a pixel and camera-frame depth Z.

    With Z fixed, ``u * w = P0 . p`` and ``v * w = P1 . p`` are linear in
    (X, Y); solving that 2x2 system works for any P, including KITTI's
    rectified P2 whose last row carries a small translation.
    """
    u, v = pixel
    P = calib.P
    Z = depth
    a11 = P[0, 0] - u * P[2, 0]
    a12 = P[0, 1] - u * P[2, 1]
    a21 = P[1, 0] - v * P[2, 0]
    a22 = P[1, 1] - v * P[2, 1]
    b1 = -((P[0, 2] - u * P[2, 2]) * Z + (P[0, 3] - u * P[2, 3]))
    b2 = -((P[1, 2] - v * P[2, 2]) * Z + (P[1, 3] - v * P[2, 3]))
    det = a11 * a22 - a12 * a21
    if abs(det) < EPS_DET:
        raise GeometryError(f"singular back-projection system: determinant {det!r}")
    X = (b1 * a22 - a12 * b2) / det
    Y = (a11 * b2 - b1 * a21) / det
    return (float(X), float(Y), Z)


def rotation_y(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# Local corner template, columns = corners. Bottom face (y = 0) goes
# counter-clockwise in the x-z plane starting at (+l/2, +w/2), then the top
# face (y = -h) in the same order.
_CORNER_SIGNS_X = np.array([1, -1, -1, 1, 1, -1, -1, 1], dtype=np.float64)
_CORNER_SIGNS_Z = np.array([1, 1, -1, -1, 1, 1, -1, -1], dtype=np.float64)
_CORNER_TOP = np.array([0, 0, 0, 0, 1, 1, 1, 1], dtype=np.float64)


def cuboid_corners(cuboid: Cuboid3D) -> np.ndarray:
    """The 8 corners as an (8, 3) array.

    Order: bottom face (y = location y) counter-clockwise seen from above,
    starting at local (+l/2, 0, +w/2); then the top face in the same order.
    """
    h, w, l = cuboid.dimensions
    local = np.stack([
        _CORNER_SIGNS_X * l / 2.0,
        -_CORNER_TOP * h,
        _CORNER_SIGNS_Z * w / 2.0,
    ])
    return (rotation_y(cuboid.yaw) @ local).T + np.asarray(cuboid.location)


def cuboid_center(cuboid: Cuboid3D) -> tuple[float, float, float]:
    X, Y, Z = cuboid.location
    return (X, Y - cuboid.dimensions[0] / 2.0, Z)


def bev_footprint(cuboid: Cuboid3D) -> np.ndarray:
    """(4, 2) bottom-face corners in the x-z plane, counter-clockwise."""
    return cuboid_corners(cuboid)[:4, [0, 2]]


def amodal_bbox(
    calib: CameraCalibration, cuboid: Cuboid3D, clip: bool = False
) -> tuple[float, float, float, float]:
    """2D box enclosing the full projected cuboid, optionally clipped to the image."""
    corners = cuboid_corners(cuboid)
    hom = np.hstack([corners, np.ones((8, 1))]) @ calib.P.T
    if np.any(hom[:, 2] <= EPS_W):
        raise GeometryError("cuboid corner behind the camera")
    uv = hom[:, :2] / hom[:, 2:3]
    x1, y1 = uv.min(axis=0)
    x2, y2 = uv.max(axis=0)
    if clip:
        xmax, ymax = calib.image_width - 1.0, calib.image_height - 1.0
        x1, x2 = min(max(x1, 0.0), xmax), min(max(x2, 0.0), xmax)
        y1, y2 = min(max(y1, 0.0), ymax), min(max(y2, 0.0), ymax)
    return (float(x1), float(y1), float(x2), float(y2))


def bbox_center(bbox: Sequence[float]) -> tuple[float, float]:
    x1, y1, x2, y2 = bbox
    return ((x1 + x2) / 2.0, (y1 + y2) / 2.0)


def offset3d_apply(c2d, offset) -> tuple[float, float]:
    return (c2d[0] + offset[0], c2d[1] + offset[1])


def center_pair(
    calib: CameraCalibration, cuboid: Cuboid3D, bbox2d: Sequence[float]
) -> CenterPair:
    """2D-box center and projected volumetric cuboid center for one object."""
    return CenterPair(bbox_center(bbox2d), project(calib, cuboid_center(cuboid)))


def alpha_to_ry(alpha: float, X: float, Z: float) -> float:
    if X == 0.0 and Z == 0.0:
        raise GeometryError("observation angle undefined for a zero viewing ray")
    return wrap_angle(alpha + math.atan2(X, Z))


def ry_to_alpha(ry: float, X: float, Z: float) -> float:
    if X == 0.0 and Z == 0.0:
        raise GeometryError("observation angle undefined for a zero viewing ray")
    return wrap_angle(ry - math.atan2(X, Z))
