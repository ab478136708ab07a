"""Sub-pixel circle refinement by gradient-weighted Gauss-Newton.

Pixels in a thin annulus around the voted circle are weighted by their
squared intensity-gradient magnitude, the strongest responses are kept, and
one (by default) Gauss-Newton step minimises

    E(c) = sum_p |grad I(p)|^2 * C_p(c)^2,   C_p(c) = |p - (c_x, c_y)| - c_r.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .detect import Circle
from .imgcore import GrayImage

MIN_SAMPLES = 6
MAX_CONDITION = 1e12


class RefinementError(ValueError):
    """Refinement is not possible; the caller keeps the voted circle."""


@dataclass(frozen=True)
class RefineParams:
    annulus_half_width: float = 4.0
    annulus_top_fraction: float = 0.5
    refine_iterations: int = 1


class AnnulusSample(NamedTuple):
    x: float
    y: float
    weight: float
    distance: float


@dataclass(frozen=True, eq=False)
class AnnulusSamples:
    """Column arrays of annulus samples; iterating yields :class:`AnnulusSample`."""

    x: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    distance: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def __iter__(self) -> Iterator[AnnulusSample]:
        for row in zip(self.x, self.y, self.weight, self.distance):
            yield AnnulusSample(*map(float, row))

    @classmethod
    def from_points(cls, x, y, weight, circle: Circle) -> "AnnulusSamples":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        w = np.broadcast_to(np.asarray(weight, dtype=np.float64), x.shape).copy()
        return cls(x, y, w, point_circle_distances(x, y, circle))


def point_circle_distance(p, c: Circle) -> float:
    """Signed distance from ``p`` to the circle: negative inside."""
    return math.hypot(p[0] - c.c_x, p[1] - c.c_y) - c.c_r


def point_circle_distances(x: np.ndarray, y: np.ndarray, c: Circle) -> np.ndarray:
    return np.hypot(x - c.c_x, y - c.c_y) - c.c_r


def distance_jacobian(x: np.ndarray, y: np.ndarray, c: Circle) -> np.ndarray:
    """Rows ``((c_x - p_x)/d, (c_y - p_y)/d, -1)`` of dC/d(c_x, c_y, c_r)."""
    dx, dy = c.c_x - np.asarray(x, float), c.c_y - np.asarray(y, float)
    d = np.hypot(dx, dy)
    return np.stack([dx / d, dy / d, -np.ones_like(d)], axis=-1)


def energy(samples: AnnulusSamples, c: Circle) -> float:
    r = point_circle_distances(samples.x, samples.y, c)
    return float(np.sum(samples.weight * r * r))


def collect_annulus(
    image: GrayImage,
    c: Circle,
    half_width: float = 4.0,
    top_fraction: float = 0.5,
    coords: Optional[np.ndarray] = None,
) -> AnnulusSamples:
    """Strongest-gradient pixels with ``|C| <= half_width``.

    The top ``top_fraction`` of annulus pixels by squared gradient magnitude
    are kept, minus any with zero gradient.

    Only interior pixels (where central differences exist) are scanned.
    ``coords``, shaped ``(h, w, 2)``, optionally gives each pixel's corrected
    position; distances are then measured there.
    """
    if half_width < 1:
        raise ValueError("half_width must be >= 1")
    h, w = image.values.shape
    reach = c.c_r + half_width + 2
    x0 = max(int(math.floor(c.c_x - reach)), 1)
    x1 = min(int(math.ceil(c.c_x + reach)) + 1, w - 1)
    y0 = max(int(math.floor(c.c_y - reach)), 1)
    y1 = min(int(math.ceil(c.c_y + reach)) + 1, h - 1)
    if x1 <= x0 or y1 <= y0:
        raise RefinementError("circle does not overlap the image interior")

    v = image.values
    gx = (v[y0:y1, x0 + 1 : x1 + 1] - v[y0:y1, x0 - 1 : x1 - 1]) / 2.0
    gy = (v[y0 + 1 : y1 + 1, x0:x1] - v[y0 - 1 : y1 - 1, x0:x1]) / 2.0
    if coords is None:
        yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    else:
        xx, yy = coords[y0:y1, x0:x1, 0], coords[y0:y1, x0:x1, 1]
    d = np.hypot(xx - c.c_x, yy - c.c_y)
    dist = d - c.c_r
    keep = (np.abs(dist) <= half_width) & (d > 0)
    if np.count_nonzero(keep) < MIN_SAMPLES:
        raise RefinementError(f"only {np.count_nonzero(keep)} annulus pixels")

    wgt = (gx * gx + gy * gy)[keep]
    if not np.any(wgt > 0):
        raise RefinementError("no intensity gradient in the annulus")
    n = max(MIN_SAMPLES, int(math.ceil(top_fraction * len(wgt))))
    order = np.argsort(-wgt, kind="stable")[:n]
    # Zero-weight pixels add nothing to the solve.
    order = order[wgt[order] > 0]
    return AnnulusSamples(xx[keep][order], yy[keep][order], wgt[order], dist[keep][order])


def _solve3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Closed-form 3x3 solve via the adjugate, falling back to LU with pivoting."""
    cof = np.array(
        [
            [a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1], a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2], a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]],
            [a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2], a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0], a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1]],
            [a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1], a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2], a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]],
        ]
    )
    det = float(a[0] @ cof[0])
    scale = float(np.abs(a).max()) ** 3
    if scale > 0 and abs(det) > 1e-8 * scale:
        return cof.T @ b / det
    return np.linalg.solve(a, b)


def normal_equations(samples: AnnulusSamples, c: Circle) -> tuple[np.ndarray, np.ndarray]:
    """``(J^T W J, J^T W C)`` at circle ``c``; samples at the centre are dropped."""
    d = np.hypot(samples.x - c.c_x, samples.y - c.c_y)
    ok = d > 0
    jac = distance_jacobian(samples.x[ok], samples.y[ok], c)
    w = samples.weight[ok]
    resid = d[ok] - c.c_r
    jw = jac * w[:, None]
    return jw.T @ jac, jw.T @ resid


def gauss_newton_step(samples: AnnulusSamples, c: Circle) -> np.ndarray:
    """Increment ``(dc_x, dc_y, dc_r) = -(J^T W J)^-1 J^T W C``."""
    if len(samples) < MIN_SAMPLES:
        raise RefinementError(f"need >= {MIN_SAMPLES} samples, got {len(samples)}")
    a, g = normal_equations(samples, c)
    if not np.all(np.isfinite(a)) or np.linalg.cond(a) >= MAX_CONDITION:
        raise RefinementError("normal matrix is singular or ill-conditioned")
    return -_solve3(a, g)


class RefineOutcome(NamedTuple):
    circle: Circle
    refined: bool
    reason: str = ""


def refine_circle(
    image: GrayImage,
    c: Circle,
    params: RefineParams = RefineParams(),
    coords: Optional[np.ndarray] = None,
) -> RefineOutcome:
    """Annulus collection plus Gauss-Newton, ``refine_iterations`` times.

    Each increment is clamped to the annulus half-width. On failure the input
    circle comes back with ``refined=False``.
    """
    hw = params.annulus_half_width
    current = c
    try:
        for _ in range(params.refine_iterations):
            samples = collect_annulus(image, current, hw, params.annulus_top_fraction, coords)
            step = np.clip(gauss_newton_step(samples, current), -hw, hw)
            current = Circle(current.c_x + step[0], current.c_y + step[1], current.c_r + step[2])
    except (RefinementError, ValueError) as exc:
        return RefineOutcome(c, False, str(exc))
    return RefineOutcome(current, True)
