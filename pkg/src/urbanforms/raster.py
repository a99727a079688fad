"""Fixed-scale binary rendering of road networks around a place.

Every place is drawn into the same Web-Mercator viewport geometry: a square
of out_size×supersample world pixels at a fixed zoom, centered on the place.
Segments are stamped as capsules (round caps and joins) onto the supersampled
grid — coverage is decided by an exact point-to-segment distance test at
pixel centers, so output is bit-identical across platforms — then the grid is
box-downsampled and binarized at half coverage.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
import struct
from typing import Iterable, Sequence

import numpy as np

from .osm import ROAD_CLASSES, PlaceRecord, RoadSegment

WEB_MERCATOR_MAX_LAT = 85.0511
TILE_SIZE = 256

DEFAULT_STROKE_WIDTHS = {
    "motorway": 5,
    "primary": 4,
    "secondary": 3,
    "tertiary": 2,
    "residential": 1,
    "rail": 2,
    "tunnel": 2,
    "other": 1,
}

IMAGES_MAGIC = b"MSIM"
IMAGES_VERSION = 1
_IMAGES_HEADER = struct.Struct("<4sHHQ")


@dataclass(frozen=True)
class RenderStyle:
    stroke_width_px: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_STROKE_WIDTHS))
    zoom: int = 15
    supersample: int = 4

    def __post_init__(self):
        if not 10 <= self.zoom <= 18:
            raise ValueError(f"zoom {self.zoom} outside [10, 18]")
        if self.supersample < 1:
            raise ValueError(f"supersample {self.supersample} must be >= 1")
        missing = [c for c in ROAD_CLASSES if c not in self.stroke_width_px]
        if missing:
            raise ValueError(f"stroke widths missing for road classes: {missing}")
        bad = {c: w for c, w in self.stroke_width_px.items() if int(w) < 1}
        if bad:
            raise ValueError(f"stroke widths must be >= 1 pixel, got {bad}")


@dataclass
class RasterImage:
    place_id: str
    width: int
    height: int
    pixels: np.ndarray  # shape (height, width), uint8, values 0/1

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.width != self.height:
            raise ValueError(f"images must be square, got {self.width}x{self.height}")
        if self.pixels.shape != (self.height, self.width):
            raise ValueError(f"pixel block {self.pixels.shape} does not match {self.height}x{self.width}")
        if self.pixels.size and self.pixels.max() > 1:
            raise ValueError("pixels must be 0/1")

    @property
    def set_fraction(self) -> float:
        return float(self.pixels.sum()) / self.pixels.size

    def as_float(self) -> np.ndarray:
        return self.pixels.astype(np.float32)


def mercator_project(lat: float, lon: float, zoom: int) -> tuple[float, float]:
    """Standard Web-Mercator world-pixel coordinates at the given zoom."""
    if zoom < 0:
        raise ValueError(f"zoom {zoom} must be >= 0")
    if abs(lat) > WEB_MERCATOR_MAX_LAT:
        warnings.warn(f"latitude {lat} outside Web-Mercator range, clamping", RuntimeWarning)
        lat = max(-WEB_MERCATOR_MAX_LAT, min(WEB_MERCATOR_MAX_LAT, lat))
    scale = TILE_SIZE * (2.0 ** zoom)
    x = (lon + 180.0) / 360.0 * scale
    phi = math.radians(lat)
    y = (1.0 - math.log(math.tan(phi) + 1.0 / math.cos(phi)) / math.pi) / 2.0 * scale
    return x, y


def mercator_unproject(x: float, y: float, zoom: int) -> tuple[float, float]:
    """Inverse of mercator_project (lat, lon in degrees)."""
    scale = TILE_SIZE * (2.0 ** zoom)
    lon = x / scale * 360.0 - 180.0
    lat = math.degrees(math.atan(math.sinh(math.pi * (1.0 - 2.0 * y / scale))))
    return lat, lon


def viewport_bbox(
    center_lat: float, center_lon: float, style: RenderStyle, out_size: int, margin: float = 1.25
) -> tuple[float, float, float, float]:
    """(min_lat, min_lon, max_lat, max_lon) comfortably containing the viewport."""
    half = out_size * style.supersample * margin / 2.0
    cx, cy = mercator_project(center_lat, center_lon, style.zoom)
    lat_n, lon_w = mercator_unproject(cx - half, cy - half, style.zoom)
    lat_s, lon_e = mercator_unproject(cx + half, cy + half, style.zoom)
    return min(lat_n, lat_s), lon_w, max(lat_n, lat_s), lon_e


def segment_touches_bbox(segment: RoadSegment, bbox: tuple[float, float, float, float]) -> bool:
    """Cheap prefilter: does the segment's own bounding box overlap bbox?"""
    lats = [p[0] for p in segment.polyline]
    lons = [p[1] for p in segment.polyline]
    min_lat, min_lon, max_lat, max_lon = bbox
    return not (max(lats) < min_lat or min(lats) > max_lat or max(lons) < min_lon or min(lons) > max_lon)


def _stamp_capsule(grid: np.ndarray, x1: float, y1: float, x2: float, y2: float, radius: float) -> None:
    """OR all pixels whose centers lie within `radius` of the segment."""
    size_y, size_x = grid.shape
    x_lo = max(int(math.floor(min(x1, x2) - radius)) - 1, 0)
    x_hi = min(int(math.ceil(max(x1, x2) + radius)) + 1, size_x)
    y_lo = max(int(math.floor(min(y1, y2) - radius)) - 1, 0)
    y_hi = min(int(math.ceil(max(y1, y2) + radius)) + 1, size_y)
    if x_lo >= x_hi or y_lo >= y_hi:
        return
    px = np.arange(x_lo, x_hi, dtype=np.float64) + 0.5 - x1
    py = np.arange(y_lo, y_hi, dtype=np.float64) + 0.5 - y1
    dx, dy = x2 - x1, y2 - y1
    seg_len2 = dx * dx + dy * dy
    if seg_len2 > 0.0:
        t = np.clip((px[None, :] * dx + py[:, None] * dy) / seg_len2, 0.0, 1.0)
    else:
        t = 0.0
    qx = px[None, :] - t * dx
    qy = py[:, None] - t * dy
    grid[y_lo:y_hi, x_lo:x_hi] |= (qx * qx + qy * qy) <= radius * radius


def render_place(
    center: PlaceRecord, roads: Sequence[RoadSegment], style: RenderStyle, out_size: int = 256
) -> RasterImage:
    """Render the roads around `center` into a binary out_size×out_size image.

    The viewport spans out_size×supersample world pixels at style.zoom; each
    supersampled pixel is one world pixel, so a stroke of width w covers
    w×supersample world pixels and lands w output pixels wide.
    """
    ss = style.supersample
    grid_size = out_size * ss
    if grid_size < 64:
        raise ValueError(f"out_size*supersample = {grid_size} is below the 64-pixel minimum")
    cx, cy = mercator_project(center.lat, center.lon, style.zoom)
    left = cx - grid_size / 2.0
    top = cy - grid_size / 2.0
    grid = np.zeros((grid_size, grid_size), dtype=bool)
    for seg in roads:
        radius = style.stroke_width_px[seg.road_class] * ss / 2.0
        pts = [mercator_project(lat, lon, style.zoom) for lat, lon in seg.polyline]
        local = [(x - left, y - top) for x, y in pts]
        for (x1, y1), (x2, y2) in zip(local, local[1:]):
            _stamp_capsule(grid, x1, y1, x2, y2, radius)
    if ss == 1:
        pixels = grid.astype(np.uint8)
    else:
        counts = grid.reshape(out_size, ss, out_size, ss).sum(axis=(1, 3), dtype=np.int64)
        pixels = (2 * counts >= ss * ss).astype(np.uint8)
    return RasterImage(center.place_id, out_size, out_size, pixels)


def is_effectively_empty(img: RasterImage, min_set_fraction: float = 0.001) -> bool:
    """True when the set-pixel fraction is strictly below min_set_fraction."""
    if not 0.0 <= min_set_fraction < 1.0:
        raise ValueError(f"min_set_fraction {min_set_fraction} outside [0, 1)")
    return img.set_fraction < min_set_fraction


# -- single-image bitmap files (PBM P4) -----------------------------------------


def write_pbm(path: str | Path, img: RasterImage) -> None:
    header = f"P4\n{img.width} {img.height}\n".encode("ascii")
    packed = np.packbits(img.pixels, axis=1)  # each row padded to a whole byte
    Path(path).write_bytes(header + packed.tobytes())


def read_pbm(path: str | Path, place_id: str = "") -> RasterImage:
    data = Path(path).read_bytes()
    if not data.startswith(b"P4"):
        raise ValueError("not a P4 bitmap")
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 2:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":  # comment line
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    width, height = int(tokens[0]), int(tokens[1])
    pos += 1  # single whitespace byte after the header
    row_bytes = (width + 7) // 8
    raw = np.frombuffer(data[pos : pos + row_bytes * height], dtype=np.uint8)
    bits = np.unpackbits(raw.reshape(height, row_bytes), axis=1)[:, :width]
    return RasterImage(place_id, width, height, bits)


# -- packed corpus file (MSIM) ---------------------------------------------------


def write_image_pack(pack_path: str | Path, index_path: str | Path, images: Sequence[RasterImage]) -> None:
    """All images bit-packed in one file plus a JSON index place_id -> ordinal.

    Bits are packed row-major, most significant bit first within each byte;
    every image occupies ceil(size^2 / 8) bytes.
    """
    ids = [img.place_id for img in images]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate place ids in image pack")
    sizes = {img.width for img in images}
    if len(sizes) > 1:
        raise ValueError(f"images must share one size, got {sorted(sizes)}")
    size = sizes.pop() if sizes else 0
    with open(pack_path, "wb") as fh:
        fh.write(_IMAGES_HEADER.pack(IMAGES_MAGIC, IMAGES_VERSION, size, len(images)))
        for img in images:
            fh.write(np.packbits(img.pixels.reshape(-1)).tobytes())
    index = {pid: i for i, pid in enumerate(ids)}
    Path(index_path).write_text(json.dumps(index, sort_keys=True, separators=(",", ":")), encoding="utf-8")


def _read_pack_header(fh) -> tuple[int, int]:
    magic, version, size, count = _IMAGES_HEADER.unpack(fh.read(_IMAGES_HEADER.size))
    if magic != IMAGES_MAGIC:
        raise ValueError(f"bad image pack magic {magic!r}")
    if version != IMAGES_VERSION:
        raise ValueError(f"unsupported image pack version {version}")
    return size, count


def read_image_pack(pack_path: str | Path, index_path: str | Path) -> tuple[np.ndarray, list[str]]:
    """Returns (images [count, size, size] uint8, place ids ordered by ordinal)."""
    index = json.loads(Path(index_path).read_text(encoding="utf-8"))
    with open(pack_path, "rb") as fh:
        size, count = _read_pack_header(fh)
        if sorted(index.values()) != list(range(count)):
            raise ValueError("image pack index ordinals are not 0..count-1")
        block = (size * size + 7) // 8
        raw = np.frombuffer(fh.read(block * count), dtype=np.uint8)
    if raw.size != block * count:
        raise ValueError("image pack truncated")
    bits = np.unpackbits(raw.reshape(count, block), axis=1)[:, : size * size]
    images = bits.reshape(count, size, size)
    ids = [pid for pid, _ in sorted(index.items(), key=lambda kv: kv[1])]
    return images, ids


def read_packed_image(pack_path: str | Path, ordinal: int) -> np.ndarray:
    """Random access to one image without loading the whole pack."""
    with open(pack_path, "rb") as fh:
        size, count = _read_pack_header(fh)
        if not 0 <= ordinal < count:
            raise IndexError(f"ordinal {ordinal} outside 0..{count - 1}")
        block = (size * size + 7) // 8
        fh.seek(_IMAGES_HEADER.size + ordinal * block)
        raw = np.frombuffer(fh.read(block), dtype=np.uint8)
    return np.unpackbits(raw)[: size * size].reshape(size, size)
