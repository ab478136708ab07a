"""Synthetic scenes with exact ground truth.

Shapes are anti-aliased by 4x4 supersampling so edges carry sub-pixel
position information. Noise is additive Gaussian per channel, seeded.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .camera import BallPose, CameraIntrinsics, project_sphere
from .detect import Circle
from .imgcore import RgbImage

SUPERSAMPLE = 4
_OFFSETS = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE - 0.5

Color = tuple[int, int, int]


@dataclass(frozen=True)
class SceneObject:
    """A disk or (optionally rotated) rectangle.

    ``occlusion`` hides that fraction of a disk's circumference behind a
    background-coloured half-plane whose normal points along
    ``occlusion_angle`` (degrees, image axes).
    """

    shape: str
    color: Color
    center: tuple[float, float]
    radius: float = 0.0
    size: tuple[float, float] = (0.0, 0.0)
    angle: float = 0.0
    occlusion: float = 0.0
    occlusion_angle: float = 0.0
    velocity: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.shape not in ("disk", "rect"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.shape == "disk" and self.radius <= 0:
            raise ValueError("disk radius must be positive")
        if self.shape == "rect" and min(self.size) <= 0:
            raise ValueError("rect size must be positive")
        if not 0.0 <= self.occlusion < 1.0:
            raise ValueError("occlusion must lie in [0, 1)")

    def extent(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        if self.shape == "disk":
            r = self.radius
            return cx - r, cy - r, cx + r, cy + r
        hw, hh = self.size[0] / 2, self.size[1] / 2
        t = math.radians(self.angle)
        ex = abs(hw * math.cos(t)) + abs(hh * math.sin(t))
        ey = abs(hw * math.sin(t)) + abs(hh * math.cos(t))
        return cx - ex, cy - ey, cx + ex, cy + ey

    def inside(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        dx, dy = x - self.center[0], y - self.center[1]
        if self.shape == "disk":
            hit = dx * dx + dy * dy <= self.radius * self.radius
            if self.occlusion > 0:
                t = math.radians(self.occlusion_angle)
                cut = self.radius * math.cos(math.pi * self.occlusion)
                hit &= dx * math.cos(t) + dy * math.sin(t) <= cut
            return hit
        t = math.radians(self.angle)
        u = dx * math.cos(t) + dy * math.sin(t)
        v = -dx * math.sin(t) + dy * math.cos(t)
        return (np.abs(u) <= self.size[0] / 2) & (np.abs(v) <= self.size[1] / 2)

    def moved(self, frames: float) -> "SceneObject":
        cx, cy = self.center
        vx, vy = self.velocity
        return replace(self, center=(cx + vx * frames, cy + vy * frames))

    @classmethod
    def from_dict(cls, d: dict) -> "SceneObject":
        kw = dict(d)
        kw["color"] = tuple(int(c) for c in kw["color"])
        kw["center"] = tuple(float(c) for c in kw["center"])
        for key in ("size", "velocity"):
            if key in kw:
                kw[key] = tuple(float(c) for c in kw[key])
        return cls(**kw)


@dataclass(frozen=True)
class SceneSpec:
    width: int = 640
    height: int = 480
    background: Color = (128, 128, 128)
    objects: tuple[SceneObject, ...] = ()
    noise_sigma: float = 0.0
    # Vertical gain ramp: rows go from (1 - ramp) at the top to (1 + ramp) at the bottom.
    luminance_ramp: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        for i, obj in enumerate(self.objects):
            x0, y0, x1, y1 = obj.extent()
            if x0 < -0.5 or y0 < -0.5 or x1 > self.width - 0.5 or y1 > self.height - 0.5:
                raise ValueError(f"object {i} ({obj.shape}) extends outside the image")

    def at_frame(self, k: int) -> "SceneSpec":
        """The scene after ``k`` frames of constant-velocity motion, reseeded per frame."""
        objs = tuple(o.moved(k) for o in self.objects)
        return replace(self, objects=objs, seed=self.seed + k)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objects"] = [asdict(o) for o in self.objects]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        kw = dict(d)
        kw["objects"] = tuple(SceneObject.from_dict(o) for o in kw.get("objects", ()))
        if "background" in kw:
            kw["background"] = tuple(int(c) for c in kw["background"])
        return cls(**kw)


def load_scene(path: str | os.PathLike) -> SceneSpec:
    return SceneSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_scene(spec: SceneSpec, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")


def _bbox(extent, width: int, height: int, pad: int = 1):
    x0, y0, x1, y1 = extent
    return (
        max(int(math.floor(x0)) - pad, 0),
        max(int(math.floor(y0)) - pad, 0),
        min(int(math.ceil(x1)) + pad + 1, width),
        min(int(math.ceil(y1)) + pad + 1, height),
    )


def _coverage(inside, bbox) -> np.ndarray:
    """Fraction of each pixel in ``bbox`` covered, by supersampling ``inside(x, y)``."""
    x0, y0, x1, y1 = bbox
    xs = (np.arange(x0, x1)[:, None] + _OFFSETS[None, :]).ravel()
    ys = (np.arange(y0, y1)[:, None] + _OFFSETS[None, :]).ravel()
    gx, gy = np.meshgrid(xs, ys)
    hit = inside(gx, gy).astype(np.float64)
    h, w = y1 - y0, x1 - x0
    return hit.reshape(h, SUPERSAMPLE, w, SUPERSAMPLE).mean(axis=(1, 3))


def _finish(canvas: np.ndarray, spec_ramp: float, sigma: float, seed: int) -> RgbImage:
    h = canvas.shape[0]
    if spec_ramp:
        gain = 1.0 + spec_ramp * (2.0 * (np.arange(h) + 0.5) / h - 1.0)
        canvas = canvas * gain[:, None, None]
    if sigma > 0:
        rng = np.random.default_rng(seed)
        canvas = canvas + rng.normal(0.0, sigma, canvas.shape)
    return RgbImage(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))


def render(spec: SceneSpec) -> tuple[RgbImage, list[Circle]]:
    """Rasterise a scene; returns the image and one ground-truth circle per disk."""
    canvas = np.empty((spec.height, spec.width, 3), dtype=np.float64)
    canvas[:] = spec.background
    truth = []
    for obj in spec.objects:
        bbox = _bbox(obj.extent(), spec.width, spec.height)
        x0, y0, x1, y1 = bbox
        cov = _coverage(obj.inside, bbox)[..., None]
        patch = canvas[y0:y1, x0:x1]
        canvas[y0:y1, x0:x1] = patch * (1.0 - cov) + np.asarray(obj.color, float) * cov
        if obj.shape == "disk":
            truth.append(Circle(obj.center[0], obj.center[1], obj.radius))
    return _finish(canvas, spec.luminance_ramp, spec.noise_sigma, spec.seed), truth


def object_mask(spec: SceneSpec, index: int) -> np.ndarray:
    """Pixels whose centre lies on visible parts of object ``index``."""
    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    mask = spec.objects[index].inside(xx, yy)
    for later in spec.objects[index + 1 :]:
        mask &= ~later.inside(xx, yy)
    return mask


def render_projected(
    ball: BallPose,
    intr: CameraIntrinsics,
    color: Color = (200, 30, 30),
    background: Color = (128, 128, 128),
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> tuple[RgbImage, Circle]:
    """Render a sphere through the pinhole model.

    A supersample is covered when its viewing ray passes within the ball
    radius of the sphere centre. The ground truth is the projected centre and
    the apparent (tangent-cone) radius, in absolute pixel coordinates.
    """
    if ball.z <= ball.ball_radius:
        raise ValueError("ball must be in front of the camera")
    u, v, r = project_sphere(ball, intr)
    w, h = intr.image_width, intr.image_height
    canvas = np.empty((h, w, 3), dtype=np.float64)
    canvas[:] = background
    centre = np.array([ball.x, ball.y, ball.z])
    r2 = ball.ball_radius**2

    def inside(x, y):
        dx = (x - intr.cx) / intr.fx
        dy = (y - intr.cy) / intr.fy
        norm2 = dx * dx + dy * dy + 1.0
        along = (centre[0] * dx + centre[1] * dy + centre[2]) / norm2
        px, py, pz = along * dx - centre[0], along * dy - centre[1], along - centre[2]
        return (px * px + py * py + pz * pz <= r2) & (along > 0)

    reach = 1.5 * r + 3
    bbox = _bbox((u - reach, v - reach, u + reach, v + reach), w, h)
    x0, y0, x1, y1 = bbox
    if x1 > x0 and y1 > y0:
        cov = _coverage(inside, bbox)[..., None]
        patch = canvas[y0:y1, x0:x1]
        canvas[y0:y1, x0:x1] = patch * (1.0 - cov) + np.asarray(color, float) * cov
    return _finish(canvas, 0.0, noise_sigma, seed), Circle(u, v, r)


def red_ball_scene(
    center=(320.0, 240.0),
    radius: float = 40.0,
    *,
    color: Color = (200, 30, 30),
    extra: Sequence[SceneObject] = (),
    occlusion: float = 0.0,
    occlusion_angle: float = 0.0,
    velocity=(0.0, 0.0),
    **kwargs,
) -> SceneSpec:
    """Convenience constructor: one coloured disk plus optional extra objects."""
    ball = SceneObject(
        "disk",
        color,
        tuple(center),
        radius=radius,
        occlusion=occlusion,
        occlusion_angle=occlusion_angle,
        velocity=tuple(velocity),
    )
    return SceneSpec(objects=(ball, *extra), **kwargs)
