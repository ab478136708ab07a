"""Image containers, PPM I/O and the raster primitives used by the tracker.

Pixel ``(x, y)`` has its centre at integer coordinates; arrays are stored
row-major as ``[y, x]``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Literal

import numpy as np
from scipy import ndimage

if TYPE_CHECKING:
    from .colorcal import ColorLut

DEFAULT_MIN_SIZE = 25

# Clockwise neighbour order (y axis points down), starting west.
_NEIGHBOURS = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))
_DIR_INDEX = {off: i for i, off in enumerate(_NEIGHBOURS)}
_EIGHT = np.ones((3, 3), dtype=bool)


class PPMFormatError(ValueError):
    """Raised for malformed or unsupported PPM data."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True, eq=False)
class RgbImage:
    """8-bit colour raster, ``pixels`` has shape ``(height, width, 3)``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) pixels, got shape {px.shape}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise ValueError("image must be non-empty")
        if px.dtype != np.uint8:
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, RgbImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Scalar intensity raster with values in ``[0, 1]``, shape ``(height, width)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"expected 2-D values, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class ClassMap:
    """Per-pixel colour-class indices; 0 is background."""

    classes: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.classes)
        if c.ndim != 2:
            raise ValueError(f"expected 2-D class array, got shape {c.shape}")
        if not np.issubdtype(c.dtype, np.unsignedinteger):
            if c.size and c.min() < 0:
                raise ValueError("class indices must be non-negative")
            c = c.astype(np.uint16 if c.size and c.max() > 255 else np.uint8)
        object.__setattr__(self, "classes", c)

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    @property
    def height(self) -> int:
        return self.classes.shape[0]


@dataclass(frozen=True)
class Region:
    """An 8-connected same-class component and its traced outer contour."""

    label: int
    class_index: int
    pixel_count: int
    bbox: tuple[int, int, int, int]  # min_x, min_y, max_x, max_y
    boundary: np.ndarray = field(repr=False)  # (n, 2) int, columns x, y

    @property
    def n_points(self) -> int:
        return len(self.boundary)


# ---------------------------------------------------------------------------
# PPM I/O
# ---------------------------------------------------------------------------


def _parse_header(data: bytes) -> tuple[int, int, int]:
    if data[:2] != b"P6":
        raise PPMFormatError(f"bad magic {data[:2]!r}, expected b'P6'", 0)
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise PPMFormatError("truncated header", pos)
        ch = data[pos : pos + 1]
        if ch == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise PPMFormatError("unterminated comment in header", pos)
            pos = end + 1
            continue
        if ch.isspace():
            pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise PPMFormatError(f"unexpected byte {ch!r} in header", pos)
        fields.append((int(data[start:pos]), start))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PPMFormatError("missing whitespace after maxval", pos)
    (width, _), (height, h_off), (maxval, m_off) = fields
    if width <= 0 or height <= 0:
        raise PPMFormatError(f"invalid dimensions {width}x{height}", h_off)
    if maxval != 255:
        raise PPMFormatError(f"unsupported maxval {maxval}", m_off)
    return width, height, pos + 1


def decode_ppm(data: bytes) -> RgbImage:
    width, height, offset = _parse_header(data)
    need = width * height * 3
    have = len(data) - offset
    if have < need:
        raise PPMFormatError(
            f"truncated payload: expected {need} bytes, found {have}", len(data)
        )
    px = np.frombuffer(data, dtype=np.uint8, count=need, offset=offset)
    return RgbImage(px.reshape(height, width, 3).copy())


def encode_ppm(image: RgbImage) -> bytes:
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(image.pixels).tobytes()


def load_ppm(path: str | os.PathLike) -> RgbImage:
    """Read a binary P6 file with maxval 255."""
    return decode_ppm(Path(path).read_bytes())


def save_ppm(image: RgbImage, path: str | os.PathLike) -> None:
    Path(path).write_bytes(encode_ppm(image))


# ---------------------------------------------------------------------------
# Raster operations
# ---------------------------------------------------------------------------


def lut_index(pixels: np.ndarray) -> np.ndarray:
    """Flat 6-bit-per-channel cell index for an ``(..., 3)`` uint8 array."""
    q = np.asarray(pixels, dtype=np.uint8) >> 2
    idx = np.left_shift(q[..., 0], 12, dtype=np.int32)
    idx |= np.left_shift(q[..., 1], 6, dtype=np.int32)
    idx |= q[..., 2]
    return idx


def classify(image: RgbImage, lut: ColorLut) -> ClassMap:
    """Apply the colour lookup table to every pixel."""
    flat = lut.table.reshape(-1)
    return ClassMap(flat[lut_index(image.pixels)])


def luminance(image: RgbImage) -> GrayImage:
    px = image.pixels.astype(np.float64)
    y = (0.299 * px[..., 0] + 0.587 * px[..., 1] + 0.114 * px[..., 2]) / 255.0
    return GrayImage(y)


def gradient_at(image: GrayImage, x: int, y: int) -> tuple[float, float]:
    """Central-difference intensity gradient at an interior pixel."""
    if not (1 <= x <= image.width - 2 and 1 <= y <= image.height - 2):
        raise ValueError(
            f"gradient undefined at ({x}, {y}) for a {image.width}x{image.height} image"
        )
    v = image.values
    return (v[y, x + 1] - v[y, x - 1]) / 2.0, (v[y + 1, x] - v[y - 1, x]) / 2.0


def gradient_field(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences over a whole array; the 1-pixel border is zero."""
    gx = np.zeros_like(values, dtype=np.float64)
    gy = np.zeros_like(values, dtype=np.float64)
    gx[1:-1, 1:-1] = (values[1:-1, 2:] - values[1:-1, :-2]) / 2.0
    gy[1:-1, 1:-1] = (values[2:, 1:-1] - values[:-2, 1:-1]) / 2.0
    return gx, gy


MorphOp = Literal["erode", "dilate", "open", "close"]


def morph(mask: np.ndarray, op: MorphOp, radius: int = 1) -> np.ndarray:
    """Binary morphology with a square structuring element of side ``2*radius+1``.

    Pixels outside the image count as background for every operation.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    m = np.asarray(mask, dtype=bool)
    se = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)

    def erode(a):
        return ndimage.binary_erosion(a, structure=se, border_value=0)

    def dilate(a):
        return ndimage.binary_dilation(a, structure=se, border_value=0)

    if op == "erode":
        return erode(m)
    if op == "dilate":
        return dilate(m)
    if op == "open":
        return dilate(erode(m))
    if op == "close":
        return erode(dilate(m))
    raise ValueError(f"unknown morphology op {op!r}")


def trace_boundary(mask: np.ndarray, start: tuple[int, int]) -> np.ndarray:
    """Moore-neighbour trace of the outer contour of the component containing
    ``start``, which must be its first pixel in raster order.

    The walk stops when it is about to repeat its first move out of the start
    pixel, which also terminates correctly on one-pixel-wide strokes. Returns
    an ``(n, 2)`` array of ``(x, y)``.
    """
    h, w = mask.shape
    grid = np.zeros((h + 2, w + 2), dtype=bool)
    grid[1:-1, 1:-1] = mask
    rows = grid.tolist()
    sx, sy = start[0] + 1, start[1] + 1
    cx, cy, back = sx, sy, 0
    first_move = None
    out = []
    # Each pixel is entered at most 8 times, so 8 * area bounds the walk.
    for _ in range(8 * int(mask.sum()) + 8):
        for k in range(1, 9):
            d = (back + k) % 8
            dx, dy = _NEIGHBOURS[d]
            if rows[cy + dy][cx + dx]:
                break
        else:
            break  # isolated pixel
        nx, ny = cx + dx, cy + dy
        if cx == sx and cy == sy:
            if first_move is None:
                first_move = (nx, ny)
            elif first_move == (nx, ny):
                break
        out.append((cx - 1, cy - 1))
        px, py = _NEIGHBOURS[(d - 1) % 8]
        back = _DIR_INDEX[(cx + px - nx, cy + py - ny)]
        cx, cy = nx, ny
    if not out:
        out.append((sx - 1, sy - 1))
    return np.array(out, dtype=np.int64)


def label_components(
    class_map: ClassMap, min_size: int = DEFAULT_MIN_SIZE
) -> tuple[np.ndarray, list[Region]]:
    """Label 8-connected same-class components.

    Returns an int32 label image (0 where the pixel belongs to background or
    to a dropped component) and the kept regions, ordered by class then by
    raster position of their first pixel.
    """
    classes = class_map.classes
    labels = np.zeros(classes.shape, dtype=np.int32)
    regions: list[Region] = []
    next_label = 1
    for cls in np.unique(classes):
        if cls == 0:
            continue
        mask = classes == cls
        lab, n = ndimage.label(mask, structure=_EIGHT)
        if n == 0:
            continue
        counts = np.bincount(lab.ravel(), minlength=n + 1)
        for idx, sl in enumerate(ndimage.find_objects(lab), start=1):
            if counts[idx] < min_size:
                continue
            sub = lab[sl] == idx
            y0, x0 = sl[0].start, sl[1].start
            first = np.flatnonzero(sub[0])[0]
            boundary = trace_boundary(sub, (int(first), 0))
            boundary += (x0, y0)
            labels[sl][sub] = next_label
            regions.append(
                Region(
                    label=next_label,
                    class_index=int(cls),
                    pixel_count=int(counts[idx]),
                    bbox=(x0, y0, sl[1].stop - 1, sl[0].stop - 1),
                    boundary=boundary,
                )
            )
            next_label += 1
    return labels, regions


def connected_components(
    class_map: ClassMap, min_size: int = DEFAULT_MIN_SIZE
) -> list[Region]:
    return label_components(class_map, min_size)[1]
