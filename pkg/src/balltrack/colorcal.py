"""Offline colour calibration: learn an RGB -> class lookup table from a sample image.

Pipeline: chroma-only mean-shift segmentation, connected components, circle
test on each large region, chroma histogram of the accepted balls' interior
pixels, binary closing of each histogram, and projection of all 64^3
quantised RGB cells onto the closed histograms.

Chroma is the CIE LUV (u*, v*) pair evaluated at a fixed reference lightness
(L* = 100), i.e. ``1300 * (u' - u'_n, v' - v'_n)``. Dropping the actual
lightness makes it invariant to scaling linear RGB, so shading across a ball
does not move its chroma.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .detect import CIRCULAR_BASELINE_QC, Circle, VoteParams, VoteRejected, region_seed, vote_region
from .imgcore import ClassMap, RgbImage, label_components, lut_index, morph

LUT_MAGIC = b"CLUT"
LUT_VERSION = 1
LUT_CELLS = 64**3
MAX_CLASSES = 8

# D65 reference white chromaticity.
_UN = 0.19783982482140777
_VN = 0.4683363029324097
_CHROMA_SCALE = 13.0 * 100.0

HIST_BINS = 64
# Covers the sRGB gamut in the chroma plane with a small margin.
ALPHA_RANGE = (-110.0, 350.0)
BETA_RANGE = (-420.0, 140.0)

_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)


class CalibrationError(RuntimeError):
    pass


class LutFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ColorLut:
    """64x64x64 table of class indices indexed by ``(r >> 2, g >> 2, b >> 2)``."""

    classes: int
    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.uint8)
        if t.size != LUT_CELLS:
            raise ValueError(f"LUT must have {LUT_CELLS} cells, got {t.size}")
        t = t.reshape(64, 64, 64)
        if not 0 <= self.classes <= 255:
            raise ValueError("class count must fit in a byte")
        if t.max(initial=0) > self.classes:
            raise ValueError(f"LUT entry {int(t.max())} exceeds class count {self.classes}")
        object.__setattr__(self, "table", t)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ColorLut):
            return NotImplemented
        return self.classes == other.classes and bool(np.array_equal(self.table, other.table))

    def to_bytes(self) -> bytes:
        return LUT_MAGIC + bytes([LUT_VERSION, self.classes]) + self.table.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ColorLut":
        if data[:4] != LUT_MAGIC:
            raise LutFormatError(f"bad magic {data[:4]!r}")
        if len(data) < 6 or data[4] != LUT_VERSION:
            raise LutFormatError(f"unsupported LUT version {data[4:5]!r}")
        if len(data) != 6 + LUT_CELLS:
            raise LutFormatError(f"expected {6 + LUT_CELLS} bytes, got {len(data)}")
        table = np.frombuffer(data, dtype=np.uint8, offset=6).copy()
        try:
            return cls(data[5], table)
        except ValueError as exc:
            raise LutFormatError(str(exc)) from None

    @classmethod
    def from_predicate(cls, fn, classes: int = 1) -> "ColorLut":
        """Build a table by evaluating ``fn(r, g, b)`` on cell centres (arrays)."""
        r, g, b = cell_centres()
        return cls(classes, np.asarray(fn(r, g, b), dtype=np.uint8))


def save_lut(lut: ColorLut, path: str | os.PathLike) -> None:
    Path(path).write_bytes(lut.to_bytes())


def load_lut(path: str | os.PathLike) -> ColorLut:
    return ColorLut.from_bytes(Path(path).read_bytes())


def cell_centres() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Representative 8-bit value of every LUT cell, each shaped (64, 64, 64)."""
    v = np.arange(64, dtype=np.float64) * 4 + 1.5
    return np.meshgrid(v, v, v, indexing="ij")


# ---------------------------------------------------------------------------
# Colour space
# ---------------------------------------------------------------------------


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64) / 255.0
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def rgb_to_xyz(rgb: np.ndarray) -> np.ndarray:
    return _srgb_to_linear(rgb) @ _RGB_TO_XYZ.T


def lightness(rgb: np.ndarray) -> np.ndarray:
    """CIE L* of 8-bit sRGB values shaped ``(..., 3)``."""
    y = rgb_to_xyz(rgb)[..., 1]
    return np.where(y > (6 / 29) ** 3, 116.0 * np.cbrt(y) - 16.0, (29 / 3) ** 3 * y)


def chroma_array(rgb: np.ndarray) -> np.ndarray:
    """Vectorised :func:`rgb_to_chroma` for ``(..., 3)`` arrays; returns ``(..., 2)``."""
    xyz = rgb_to_xyz(rgb)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    den = x + 15.0 * y + 3.0 * z
    ok = den > 1e-12
    safe = np.where(ok, den, 1.0)
    up = np.where(ok, 4.0 * x / safe, _UN)
    vp = np.where(ok, 9.0 * y / safe, _VN)
    return np.stack([_CHROMA_SCALE * (up - _UN), _CHROMA_SCALE * (vp - _VN)], axis=-1)


def rgb_to_chroma(r: int, g: int, b: int) -> tuple[float, float]:
    a, bb = chroma_array(np.array([r, g, b], dtype=np.float64))
    return float(a), float(bb)


def chroma_bins(chroma: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Histogram bin of each chroma pair, plus an in-range mask."""
    a = (chroma[..., 0] - ALPHA_RANGE[0]) / (ALPHA_RANGE[1] - ALPHA_RANGE[0]) * HIST_BINS
    b = (chroma[..., 1] - BETA_RANGE[0]) / (BETA_RANGE[1] - BETA_RANGE[0]) * HIST_BINS
    ia, ib = np.floor(a).astype(np.int64), np.floor(b).astype(np.int64)
    ok = (ia >= 0) & (ia < HIST_BINS) & (ib >= 0) & (ib < HIST_BINS)
    return np.clip(ia, 0, HIST_BINS - 1), np.clip(ib, 0, HIST_BINS - 1), ok


# ---------------------------------------------------------------------------
# Mean-shift
# ---------------------------------------------------------------------------


def _disk_offsets(radius: float) -> list[tuple[int, int]]:
    r = int(math.ceil(radius)) + 1
    return [
        (dx, dy)
        for dy in range(-r, r + 1)
        for dx in range(-r, r + 1)
        if dx * dx + dy * dy <= (radius + 1) ** 2
    ]


def meanshift_filter(
    chroma: np.ndarray,
    spatial_bw: float = 8.0,
    chroma_bw: float = 8.0,
    max_iter: int = 20,
    tol: float = 0.1,
) -> np.ndarray:
    """Flat-kernel mean-shift in joint (x, y, alpha, beta) space.

    Every pixel starts at its own position and chroma and moves to the mean of
    the original samples within ``spatial_bw`` pixels and ``chroma_bw`` chroma
    units, until the shift (in bandwidth units) drops below ``tol``. Returns
    the converged chroma of every pixel, shape ``(h, w, 2)``.
    """
    if spatial_bw <= 0 or chroma_bw <= 0:
        raise ValueError("bandwidths must be positive")
    h, w = chroma.shape[:2]
    A = np.ascontiguousarray(chroma[..., 0], dtype=np.float64)
    B = np.ascontiguousarray(chroma[..., 1], dtype=np.float64)
    yy, xx = np.mgrid[0:h, 0:w]
    px, py = xx.ravel().astype(np.float64), yy.ravel().astype(np.float64)
    pa, pb = A.ravel().copy(), B.ravel().copy()
    active = np.arange(h * w)
    hs2, hr2 = spatial_bw**2, chroma_bw**2
    offsets = _disk_offsets(spatial_bw)

    for _ in range(max_iter):
        if len(active) == 0:
            break
        cx, cy, ca, cb = px[active], py[active], pa[active], pb[active]
        bx, by = np.rint(cx).astype(np.int64), np.rint(cy).astype(np.int64)
        sx, sy, sa, sb = (np.zeros(len(active)) for _ in range(4))
        cnt = np.zeros(len(active))
        for dx, dy in offsets:
            qx, qy = bx + dx, by + dy
            inb = (qx >= 0) & (qx < w) & (qy >= 0) & (qy < h)
            qx, qy = np.clip(qx, 0, w - 1), np.clip(qy, 0, h - 1)
            qa, qb = A[qy, qx], B[qy, qx]
            sel = inb & ((qx - cx) ** 2 + (qy - cy) ** 2 <= hs2)
            sel &= (qa - ca) ** 2 + (qb - cb) ** 2 <= hr2
            sx += qx * sel
            sy += qy * sel
            sa += qa * sel
            sb += qb * sel
            cnt += sel
        has = cnt > 0
        nc = np.where(has, cnt, 1.0)
        nx = np.where(has, sx / nc, cx)
        ny = np.where(has, sy / nc, cy)
        na = np.where(has, sa / nc, ca)
        nb = np.where(has, sb / nc, cb)
        shift = np.sqrt(
            ((nx - cx) ** 2 + (ny - cy) ** 2) / hs2 + ((na - ca) ** 2 + (nb - cb) ** 2) / hr2
        )
        px[active], py[active], pa[active], pb[active] = nx, ny, na, nb
        active = active[shift >= tol]
    return np.stack([pa, pb], axis=-1).reshape(h, w, 2)


def group_modes(modes: np.ndarray, chroma_bw: float) -> np.ndarray:
    """Label converged chroma modes, merging those within ``chroma_bw``.

    Modes are snapped to a grid of ``chroma_bw / 4``; grid cells are visited
    by decreasing population and each joins the first group whose seed lies
    within ``chroma_bw``. Labels start at 1.
    """
    flat = modes.reshape(-1, 2)
    step = chroma_bw / 4.0
    snapped = np.rint(flat / step).astype(np.int64)
    uniq, inv, counts = np.unique(snapped, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    order = sorted(range(len(uniq)), key=lambda i: (-counts[i], tuple(uniq[i])))
    seeds: list[np.ndarray] = []
    group_of = np.empty(len(uniq), dtype=np.int64)
    centres = uniq * step
    for i in order:
        c = centres[i]
        if seeds:
            d2 = ((np.asarray(seeds) - c) ** 2).sum(axis=1)
            j = int(np.argmin(d2))
            if d2[j] <= chroma_bw**2:
                group_of[i] = j
                continue
        seeds.append(c)
        group_of[i] = len(seeds) - 1
    return (group_of[inv] + 1).reshape(modes.shape[:-1])


def meanshift_segment(
    image: RgbImage, spatial_bw: float = 8.0, chroma_bw: float = 8.0
) -> ClassMap:
    """Chroma-only mean-shift segmentation; returns per-pixel mode labels (>= 1)."""
    modes = meanshift_filter(chroma_array(image.pixels), spatial_bw, chroma_bw)
    labels = group_modes(modes, chroma_bw)
    dtype = np.uint8 if labels.max() <= 255 else np.uint16
    return ClassMap(labels.astype(dtype))


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationConfig:
    spatial_bw: float = 8.0
    # Chroma here is normalised to L* = 100, which stretches dark colours.
    chroma_bw: float = 24.0
    min_region_size: int = 100
    fit_ratio_threshold: float = 0.5
    circular_baseline: float = CIRCULAR_BASELINE_QC
    closing_radius: int = 1
    # Cells darker than this L* have no reliable chroma and stay background.
    min_lightness: float = 12.0
    max_classes: int = MAX_CLASSES
    # Balls whose mean chroma differ by less than this share a class.
    merge_distance: float = 16.0
    seed: int = 0


@dataclass(frozen=True)
class RegionFit:
    label: int
    pixel_count: int
    circle: Optional[Circle]
    quality: float
    fit_ratio: float
    accepted: bool
    class_index: int = 0


@dataclass(eq=False)
class CalibrationResult:
    lut: ColorLut
    fits: list[RegionFit]
    sample_counts: list[int]
    histograms: np.ndarray  # (classes, bins, bins) raw counts
    closed: np.ndarray  # (classes, bins, bins) bool support after closing
    class_chroma: list[tuple[float, float]] = field(default_factory=list)


def _close_support(support: np.ndarray, radius: int) -> np.ndarray:
    # Pad so the closing is extensive at the histogram border too.
    pad = 2 * radius
    big = np.pad(support, pad)
    return morph(big, "close", radius)[pad:-pad, pad:-pad]


def calibrate_detailed(
    image: RgbImage, config: CalibrationConfig = CalibrationConfig()
) -> CalibrationResult:
    segments = meanshift_segment(image, config.spatial_bw, config.chroma_bw)
    labels, regions = label_components(segments, config.min_region_size)

    vparams = VoteParams(frame_width=image.width, frame_height=image.height)
    cells = (image.pixels >> 2).astype(np.float64) * 4 + 1.5
    chroma = chroma_array(cells)
    bright = lightness(cells) >= config.min_lightness
    yy, xx = np.mgrid[0 : image.height, 0 : image.width]

    fits: list[RegionFit] = []
    class_chroma: list[np.ndarray] = []
    hists: list[np.ndarray] = []
    for region in regions:
        try:
            vote = vote_region(region, vparams, region_seed(config.seed, region.label))
        except VoteRejected:
            fits.append(RegionFit(region.label, region.pixel_count, None, 0.0, 0.0, False))
            continue
        ratio = vote.quality / config.circular_baseline
        accepted = ratio >= config.fit_ratio_threshold
        cls = 0
        if accepted:
            c = vote.circle
            inside = (labels == region.label) & bright
            inside &= (xx - c.c_x) ** 2 + (yy - c.c_y) ** 2 <= c.c_r**2
            samples = chroma[inside]
            if len(samples) == 0:
                accepted = False
            else:
                mean = samples.mean(axis=0)
                for k, ref in enumerate(class_chroma):
                    if np.hypot(*(mean - ref)) <= config.merge_distance:
                        cls = k + 1
                        break
                else:
                    if len(class_chroma) >= config.max_classes:
                        raise CalibrationError(
                            f"more than {config.max_classes} distinct ball colours"
                        )
                    class_chroma.append(mean)
                    hists.append(np.zeros((HIST_BINS, HIST_BINS), dtype=np.int64))
                    cls = len(class_chroma)
                ia, ib, ok = chroma_bins(samples)
                np.add.at(hists[cls - 1], (ia[ok], ib[ok]), 1)
        fits.append(
            RegionFit(region.label, region.pixel_count, vote.circle, vote.quality, ratio, accepted, cls)
        )

    if not hists:
        detail = ", ".join(f"region {f.label}: fit ratio {f.fit_ratio:.3f}" for f in fits)
        raise CalibrationError(
            "no circular region found" + (f" ({detail})" if detail else " (no regions)")
        )

    raw = np.stack(hists)
    closed = np.stack([_close_support(h > 0, config.closing_radius) for h in raw])
    lut = project_lut(raw, closed, config.min_lightness)
    return CalibrationResult(
        lut,
        fits,
        [int(h.sum()) for h in raw],
        raw,
        closed,
        [(float(a), float(b)) for a, b in class_chroma],
    )


def project_lut(raw: np.ndarray, closed: np.ndarray, min_lightness: float) -> ColorLut:
    """Assign every RGB cell the class whose closed chroma support contains it.

    Overlaps go to the class with the larger raw count in that bin, then to
    the lower class index.
    """
    r, g, b = cell_centres()
    rgb = np.stack([r, g, b], axis=-1)
    ia, ib, ok = chroma_bins(chroma_array(rgb))
    ok &= lightness(rgb) >= min_lightness
    member = closed[:, ia, ib] & ok[None]
    score = np.where(member, raw[:, ia, ib].astype(np.float64), -1.0)
    best = np.argmax(score, axis=0)  # first maximum -> lower class index
    table = np.where(member.any(axis=0), best + 1, 0).astype(np.uint8)
    return ColorLut(len(raw), table)


def calibrate(image: RgbImage, config: CalibrationConfig = CalibrationConfig()) -> ColorLut:
    return calibrate_detailed(image, config).lut
