"""Randomized three-point centre voting, radius voting and circle quality.

Each region's outer contour votes for circle centres: three distinct contour
pixels are drawn at random, their circumcentre is binned into an accumulator
at image resolution, and voting stops as soon as one bin collects
``center_threshold`` votes. A deterministic 1-D histogram of contour-to-centre
distances then gives the radius, and

    Q_c = c_max * r_max / (n_votes * n_points)

scores how circular the region is.

Randomness comes from ``numpy.random.default_rng`` (PCG64) seeded explicitly.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .camera import CameraIntrinsics, UndistortMap, build_undistort_map
from .imgcore import ClassMap, Region, RgbImage, classify, label_components, morph

DEGENERATE_EPS = 1e-9

# Median Q_c of digital circles (radius 12..60 px, sub-pixel centres) under the
# default vote parameters, unoccluded and with half the circumference hidden.
# Regenerate with ``circular_baseline`` if the voting defaults change.
CIRCULAR_BASELINE_QC = 0.177
HALF_OCCLUDED_BASELINE_QC = 0.0235
# Half of the half-occluded median, with another factor 2 for rendering and
# classification noise: half-hidden balls must still pass, large same-colour
# non-circular blobs (Q_c well below 0.004) must not.
DEFAULT_QUALITY_THRESHOLD = 0.25 * HALF_OCCLUDED_BASELINE_QC

_CHUNK = 128
# Traced contour pixels are the innermost layer of the region; their centres
# sit about half a pixel inside the edge the radius should describe.
BOUNDARY_OFFSET = 0.5


class VoteRejected(ValueError):
    """A region cannot be voted on (e.g. too few contour pixels)."""


@dataclass(frozen=True)
class Circle:
    c_x: float
    c_y: float
    c_r: float

    def __post_init__(self):
        for name in ("c_x", "c_y", "c_r"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.c_r > 0:
            raise ValueError(f"circle radius must be positive, got {self.c_r}")

    def shifted(self, dx: float, dy: float) -> "Circle":
        return Circle(self.c_x + dx, self.c_y + dy, self.c_r)


@dataclass(frozen=True)
class VoteParams:
    center_threshold: int = 16
    max_votes: int = 1200
    quality_threshold: float = DEFAULT_QUALITY_THRESHOLD
    min_region_size: int = 25
    seed: int = 0
    morph_radius: int = 1
    # Accumulator covers the frame plus this fraction on every side.
    margin: float = 0.2
    frame_width: int = 640
    frame_height: int = 480


@dataclass(frozen=True)
class CenterVote:
    """Outcome of the centre vote alone."""

    center: tuple[int, int]
    c_max: int
    n_votes: int
    converged: bool  # False when the vote budget ran out first


@dataclass(frozen=True)
class VoteResult:
    circle: Circle
    c_max: int
    r_max: int
    n_votes: int
    n_points: int
    quality: float
    converged: bool = True


class Detection(NamedTuple):
    region: Region
    vote: VoteResult
    # Current best circle: the voted one until refinement replaces it.
    circle: Optional[Circle] = None
    refined: bool = False
    pose: Optional[object] = None

    @property
    def best_circle(self) -> Circle:
        return self.circle if self.circle is not None else self.vote.circle


# ---------------------------------------------------------------------------
# Circumcentre
# ---------------------------------------------------------------------------


def circumcenter(p1, p2, p3) -> Optional[tuple[float, float]]:
    """Centre of the circle through three points, or ``None`` when collinear.

    Evaluated relative to ``p1`` so the result is exactly translation
    equivariant for integer input.
    """
    x1, y1 = float(p1[0]), float(p1[1])
    ux, uy = float(p2[0]) - x1, float(p2[1]) - y1
    vx, vy = float(p3[0]) - x1, float(p3[1]) - y1
    den = 2.0 * (ux * vy - uy * vx)
    if abs(den) < DEGENERATE_EPS:
        return None
    su = ux * ux + uy * uy
    sv = vx * vx + vy * vy
    return x1 + (vy * su - uy * sv) / den, y1 + (ux * sv - vx * su) / den


def circumcenter_printed(p1, p2, p3) -> Optional[tuple[float, float]]:
    """Circumcentre in the absolute-coordinate form with ``x_ij = x_i - x_j``
    and ``d_i = x_i^2 + y_i^2``; the two denominators are negatives of each
    other. Kept as a cross-check for :func:`circumcenter`.
    """
    (x1, y1), (x2, y2), (x3, y3) = p1, p2, p3
    d1, d2, d3 = x1 * x1 + y1 * y1, x2 * x2 + y2 * y2, x3 * x3 + y3 * y3
    x32, x13, x21 = x3 - x2, x1 - x3, x2 - x1
    y32, y13, y21 = y3 - y2, y1 - y3, y2 - y1
    den_x = 2.0 * (x1 * y32 + x2 * y13 + x3 * y21)
    den_y = 2.0 * (y1 * x32 + y2 * x13 + y3 * x21)
    if abs(den_x) < DEGENERATE_EPS:
        return None
    cx = (d1 * y32 + d2 * y13 + d3 * y21) / den_x
    cy = (d1 * x32 + d2 * x13 + d3 * x21) / den_y
    return cx, cy


def _circumcenters(a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Vectorised :func:`circumcenter` returning offsets from ``a`` and a validity mask."""
    ux, uy = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    vx, vy = c[:, 0] - a[:, 0], c[:, 1] - a[:, 1]
    den = 2.0 * (ux * vy - uy * vx)
    ok = np.abs(den) >= DEGENERATE_EPS
    safe = np.where(ok, den, 1.0)
    su = ux * ux + uy * uy
    sv = vx * vx + vy * vy
    rx = (vy * su - uy * sv) / safe
    ry = (ux * sv - vx * su) / safe
    return rx, ry, ok


# ---------------------------------------------------------------------------
# Voting
# ---------------------------------------------------------------------------


def _accumulator_bounds(params: VoteParams) -> tuple[int, int, int, int]:
    mx = int(math.ceil(params.margin * params.frame_width))
    my = int(math.ceil(params.margin * params.frame_height))
    return -mx, -my, params.frame_width + mx, params.frame_height + my


def _first_reaching(keys: np.ndarray, count: int) -> int:
    """Index of the first entry whose key has occurred ``count`` times so far, or -1."""
    if len(keys) < count:
        return -1
    _, inv = np.unique(keys, return_inverse=True)
    order = np.argsort(inv, kind="stable")
    sorted_inv = inv[order]
    starts = np.flatnonzero(np.r_[True, sorted_inv[1:] != sorted_inv[:-1]])
    rank = np.arange(len(keys)) - np.repeat(starts, np.diff(np.r_[starts, len(keys)]))
    hits = order[rank == count - 1]
    return int(hits.min()) if len(hits) else -1


def vote_center(
    region: Region,
    params: VoteParams = VoteParams(),
    rng_seed: int = 0,
    points: Optional[np.ndarray] = None,
) -> CenterVote:
    """Randomized circumcentre vote over a region's contour.

    ``points`` overrides the contour coordinates (e.g. undistorted ones).
    """
    pts = region.boundary if points is None else points
    pts = np.asarray(pts, dtype=np.float64)
    n = len(pts)
    if n < 3:
        raise VoteRejected(f"region {region.label}: boundary has {n} pixels, need >= 3")

    integral = bool(np.all(pts == np.round(pts)))
    rng = np.random.default_rng(rng_seed)
    x0, y0, x1, y1 = _accumulator_bounds(params)
    span = x1 - x0
    keys = np.empty(0, dtype=np.int64)
    draws = 0
    stop = -1
    budget = params.max_votes
    while len(keys) < budget and draws < 4 * budget:
        idx = rng.integers(0, n, size=(_CHUNK, 3))
        draws += _CHUNK
        idx = idx[(idx[:, 0] != idx[:, 1]) & (idx[:, 0] != idx[:, 2]) & (idx[:, 1] != idx[:, 2])]
        a, b, c = pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]]
        rx, ry, ok = _circumcenters(a, b, c)
        if integral:
            # Round the offset alone so binning is exactly translation equivariant.
            bx = a[:, 0] + np.floor(rx + 0.5)
            by = a[:, 1] + np.floor(ry + 0.5)
        else:
            bx = np.floor(a[:, 0] + rx + 0.5)
            by = np.floor(a[:, 1] + ry + 0.5)
        inside = ok & (bx >= x0) & (bx < x1) & (by >= y0) & (by < y1)
        new = ((by[inside] - y0) * span + (bx[inside] - x0)).astype(np.int64)
        keys = np.concatenate([keys, new])[:budget]
        stop = _first_reaching(keys, params.center_threshold)
        if stop >= 0:
            keys = keys[: stop + 1]
            break

    if len(keys) == 0:
        raise VoteRejected(f"region {region.label}: no usable centre votes")
    uniq, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
    if stop >= 0:
        peak_key = keys[stop]
        c_max = params.center_threshold
    else:
        c_max = int(counts.max())
        # Among tied peaks, take the bin that reached the peak count first.
        peak_key = keys[_first_reaching(keys, c_max)]
    center = (int(peak_key % span) + x0, int(peak_key // span) + y0)
    return CenterVote(center, int(c_max), int(len(keys)), stop >= 0)


def vote_radius(
    region: Region,
    center: tuple[float, float],
    points: Optional[np.ndarray] = None,
    max_radius: Optional[int] = None,
) -> tuple[int, int]:
    """Histogram of rounded contour-to-centre distances; returns ``(c_r, r_max)``.

    Ties resolve to the smaller radius.
    """
    if not (math.isfinite(center[0]) and math.isfinite(center[1])):
        raise ValueError(f"centre must be finite, got {center}")
    pts = np.asarray(region.boundary if points is None else points, dtype=np.float64)
    dist = np.floor(np.hypot(pts[:, 0] - center[0], pts[:, 1] - center[1]) + 0.5)
    dist = dist.astype(np.int64)
    length = int(dist.max()) + 1
    if max_radius is not None:
        length = max(length, max_radius + 1)
    hist = np.bincount(dist, minlength=length)
    c_r = int(np.argmax(hist))
    return c_r, int(hist[c_r])


def assess_quality(c_max: int, r_max: int, n_votes: int, n_points: int) -> float:
    if n_votes <= 0 or n_points <= 0:
        raise ValueError("n_votes and n_points must be positive")
    return (c_max * r_max) / (n_votes * n_points)


def vote_region(
    region: Region,
    params: VoteParams = VoteParams(),
    rng_seed: int = 0,
    points: Optional[np.ndarray] = None,
) -> VoteResult:
    """Centre vote, radius vote and quality for one region."""
    cv = vote_center(region, params, rng_seed, points)
    diag = int(math.ceil(math.hypot(params.frame_width, params.frame_height)))
    c_r, r_max = vote_radius(region, cv.center, points, diag)
    if c_r <= 0:
        raise VoteRejected(f"region {region.label}: zero radius")
    n_points = len(region.boundary)
    q = assess_quality(cv.c_max, r_max, cv.n_votes, n_points)
    return VoteResult(
        Circle(float(cv.center[0]), float(cv.center[1]), c_r + BOUNDARY_OFFSET),
        cv.c_max,
        r_max,
        cv.n_votes,
        n_points,
        q,
        cv.converged,
    )


def region_seed(seed: int, *keys: int) -> int:
    """Independent per-region seed derived from a base seed."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Frame pipeline
# ---------------------------------------------------------------------------


def _foreground_box(classes: np.ndarray, pad: int) -> Optional[tuple[int, int, int, int]]:
    rows = np.flatnonzero(classes.any(axis=1))
    if len(rows) == 0:
        return None
    cols = np.flatnonzero(classes.any(axis=0))
    h, w = classes.shape
    return (
        max(int(cols[0]) - pad, 0),
        max(int(rows[0]) - pad, 0),
        min(int(cols[-1]) + pad + 1, w),
        min(int(rows[-1]) + pad + 1, h),
    )


def _cleanup_array(classes: np.ndarray, radius: int) -> np.ndarray:
    out = np.zeros_like(classes)
    for cls in np.flatnonzero(np.bincount(classes.ravel()))[1:]:
        m = morph(morph(classes == cls, "open", radius), "close", radius)
        out[m & (out == 0)] = cls
    return out


def cleanup(class_map: ClassMap, radius: int) -> ClassMap:
    """Opening then closing of every class mask (noise removal, hole filling).

    Where closings of different classes overlap, the lower class wins.
    """
    if radius < 1:
        return class_map
    classes = class_map.classes
    box = _foreground_box(classes, 2 * radius + 1)
    if box is None:
        return class_map
    x0, y0, x1, y1 = box
    out = np.zeros_like(classes)
    out[y0:y1, x0:x1] = _cleanup_array(classes[y0:y1, x0:x1], radius)
    return ClassMap(out)


@dataclass
class StageTimer:
    """Accumulates per-stage wall time in microseconds."""

    times: dict[str, float] = field(default_factory=dict)

    def add(self, stage: str, seconds: float) -> None:
        self.times[stage] = self.times.get(stage, 0.0) + seconds * 1e6


def regions_for_frame(
    frame: RgbImage,
    lut,
    params: VoteParams,
    timer: Optional[StageTimer] = None,
) -> list[Region]:
    """Classify, clean up and label a frame.

    Cleanup and labelling only touch the bounding box of classified pixels;
    region coordinates are returned in frame space.
    """
    t0 = time.perf_counter()
    classes = classify(frame, lut).classes
    t1 = time.perf_counter()
    regions: list[Region] = []
    pad = 2 * params.morph_radius + 1
    box = _foreground_box(classes, pad)
    if box is not None:
        x0, y0, x1, y1 = box
        crop = classes[y0:y1, x0:x1]
        if params.morph_radius >= 1:
            crop = _cleanup_array(crop, params.morph_radius)
        for r in label_components(ClassMap(crop), params.min_region_size)[1]:
            bx0, by0, bx1, by1 = r.bbox
            regions.append(
                dataclasses.replace(
                    r,
                    bbox=(bx0 + x0, by0 + y0, bx1 + x0, by1 + y0),
                    boundary=r.boundary + (x0, y0),
                )
            )
    t2 = time.perf_counter()
    if timer is not None:
        timer.add("classify", t1 - t0)
        timer.add("components", t2 - t1)
    return regions


def detect_balls(
    frame: RgbImage,
    lut,
    intr: Optional[CameraIntrinsics] = None,
    params: VoteParams = VoteParams(),
    *,
    undistort: Optional[UndistortMap] = None,
    frame_index: int = 0,
    timer: Optional[StageTimer] = None,
) -> list[Detection]:
    """Candidate balls in a frame, best quality first.

    Contour points are undistorted before voting when the camera has radial
    distortion; the returned circles are in undistorted pixel coordinates.
    """
    params = _with_frame_size(params, frame)
    regions = regions_for_frame(frame, lut, params, timer)
    if undistort is None and intr is not None and intr.has_distortion:
        undistort = build_undistort_map(intr)

    t0 = time.perf_counter()
    out = []
    for region in regions:
        pts = undistort.undistort_points(region.boundary) if undistort is not None else None
        try:
            vote = vote_region(region, params, region_seed(params.seed, frame_index, region.label), pts)
        except VoteRejected:
            continue
        if vote.quality >= params.quality_threshold:
            out.append(Detection(region, vote, vote.circle))
    out.sort(key=lambda d: (-d.vote.quality, d.region.label))
    if timer is not None:
        timer.add("vote", time.perf_counter() - t0)
    return out


def _with_frame_size(params: VoteParams, frame: RgbImage) -> VoteParams:
    if (params.frame_width, params.frame_height) == (frame.width, frame.height):
        return params
    return dataclasses.replace(params, frame_width=frame.width, frame_height=frame.height)


# ---------------------------------------------------------------------------
# Quality baseline
# ---------------------------------------------------------------------------


def digital_disk(radius: float, center=(0.0, 0.0), size=None) -> np.ndarray:
    """Boolean mask of pixels whose centres lie within ``radius`` of ``center``."""
    if size is None:
        s = int(math.ceil(2 * (radius + abs(center[0]) + abs(center[1]))) + 5)
        size = (s, s)
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w]
    return (xx - center[0]) ** 2 + (yy - center[1]) ** 2 <= radius * radius


def circular_baseline(
    params: VoteParams = VoteParams(),
    radii=range(12, 61, 4),
    seeds=range(5),
    occlusion: float = 0.0,
) -> float:
    """Median Q_c of digital circles under ``params``.

    Centres get deterministic sub-pixel offsets so that votes spread over
    neighbouring bins the way they do on real frames. With ``occlusion`` > 0,
    that fraction of each circumference is cut away by a half-plane at a
    deterministic random angle.
    """
    qs = []
    for r in radii:
        size = 2 * r + 11
        for s in seeds:
            frac = np.random.default_rng(region_seed(s, r)).random(3)
            centre = (size // 2 + frac[0], size // 2 + frac[1])
            mask = digital_disk(r, centre, (size, size))
            if occlusion > 0:
                t = 2 * math.pi * frac[2]
                yy, xx = np.mgrid[0:size, 0:size]
                along = (xx - centre[0]) * math.cos(t) + (yy - centre[1]) * math.sin(t)
                mask &= along <= r * math.cos(math.pi * occlusion)
            region = label_components(ClassMap(mask.astype(np.uint8)), 1)[1][0]
            qs.append(vote_region(region, params, region_seed(s, r, 1)).quality)
    return float(np.median(qs))
