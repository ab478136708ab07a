"""Pinhole camera with two-term radial distortion, and ball pose from an image circle."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .config import read_key_values


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    image_width: int = 640
    image_height: int = 480

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.image_width and 0 <= self.cy < self.image_height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.image_width}x{self.image_height} image"
            )

    @property
    def focal(self) -> float:
        """Single focal length used for depth recovery; assumes near-square pixels."""
        return 0.5 * (self.fx + self.fy)

    @property
    def has_distortion(self) -> bool:
        return self.k1 != 0.0 or self.k2 != 0.0

    @classmethod
    def default(cls, width: int = 640, height: int = 480, focal: float = 500.0):
        return cls(focal, focal, width / 2.0, height / 2.0, 0.0, 0.0, width, height)


@dataclass(frozen=True)
class CameraConfig:
    intrinsics: CameraIntrinsics
    ball_radius_m: float = 0.035


def load_camera_config(path: str | os.PathLike) -> CameraConfig:
    """Read ``key = value`` lines: fx, fy, cx, cy, k1, k2, width, height, ball_radius_m."""
    kv = read_key_values(Path(path))
    try:
        width = int(kv.get("width", 640))
        height = int(kv.get("height", 480))
        intr = CameraIntrinsics(
            fx=float(kv["fx"]),
            fy=float(kv["fy"]),
            cx=float(kv.get("cx", width / 2.0)),
            cy=float(kv.get("cy", height / 2.0)),
            k1=float(kv.get("k1", 0.0)),
            k2=float(kv.get("k2", 0.0)),
            image_width=width,
            image_height=height,
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing camera key {exc.args[0]!r}") from None
    return CameraConfig(intr, float(kv.get("ball_radius_m", 0.035)))


@dataclass(frozen=True)
class BallPose:
    """Ball centre in the camera frame, metres."""

    x: float
    y: float
    z: float
    ball_radius: float


@dataclass(frozen=True, eq=False)
class UndistortMap:
    """Per-pixel radial correction tables, each of shape ``(height, width, 2)``.

    ``source[v, u]`` is where the ideal (undistorted) pixel ``(u, v)`` lands in
    the distorted frame. ``corrected[v, u]`` is the inverse: the undistorted
    position of an observed pixel, which is what boundary points need.
    """

    source: np.ndarray
    corrected: np.ndarray

    def undistort_points(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.int64)
        return self.corrected[pts[:, 1], pts[:, 0]]


def _radial_factor(r2: np.ndarray, k1: float, k2: float) -> np.ndarray:
    return 1.0 + k1 * r2 + k2 * r2 * r2


@lru_cache(maxsize=8)
def build_undistort_map(intr: CameraIntrinsics) -> UndistortMap:
    w, h = intr.image_width, intr.image_height
    u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    xn = (u - intr.cx) / intr.fx
    yn = (v - intr.cy) / intr.fy

    s = _radial_factor(xn * xn + yn * yn, intr.k1, intr.k2)
    source = np.stack([xn * s * intr.fx + intr.cx, yn * s * intr.fy + intr.cy], axis=-1)

    # Invert x_d = x_u * s(|x_u|^2) by fixed-point iteration.
    xu, yu = xn.copy(), yn.copy()
    for _ in range(20):
        s = _radial_factor(xu * xu + yu * yu, intr.k1, intr.k2)
        xu, yu = xn / s, yn / s
    corrected = np.stack([xu * intr.fx + intr.cx, yu * intr.fy + intr.cy], axis=-1)

    source.setflags(write=False)
    corrected.setflags(write=False)
    return UndistortMap(source, corrected)


def pose_from_circle(circle, intr: CameraIntrinsics, ball_radius: float) -> BallPose:
    """Metric ball centre from an image circle.

    ``circle.c_x`` and ``circle.c_y`` must already be relative to the
    principal point.
    """
    if not circle.c_r > 0:
        raise ValueError(f"circle radius must be positive, got {circle.c_r}")
    f = intr.focal
    z = ball_radius * math.sqrt(1.0 + (f * f) / (circle.c_r * circle.c_r))
    return BallPose(circle.c_x * z / f, circle.c_y * z / f, z, ball_radius)


def project_sphere(pose: BallPose, intr: CameraIntrinsics) -> tuple[float, float, float]:
    """Image centre (absolute pixels) and apparent radius of a sphere.

    The apparent radius is that of the tangent cone seen along the optical
    axis, ``f * R / sqrt(z^2 - R^2)``.
    """
    if pose.z <= pose.ball_radius:
        raise ValueError("sphere must lie entirely in front of the camera")
    f = intr.focal
    u = intr.cx + f * pose.x / pose.z
    v = intr.cy + f * pose.y / pose.z
    r = f * pose.ball_radius / math.sqrt(pose.z**2 - pose.ball_radius**2)
    return u, v, r
