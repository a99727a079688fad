"""Synthetic street-pattern corpus for tests and desk-scale experiments.

Four parametric families echo classic settlement archetypes: orthogonal
grids, radial/concentric webs, warped organic growth (random-walk streets),
and sparse rural roads. Images are assigned to families round-robin, every
random choice comes from a per-image seeded generator, and labels ship in a
sidecar file so retrieval and clustering tests have ground truth.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .osm import CorpusManifest, PlaceRecord
from .raster import RasterImage, _stamp_capsule, write_image_pack

FAMILIES = ("grid", "radial", "organic", "sparse")


def _clipped_line(img, cx, cy, dx, dy, half_len, radius):
    _stamp_capsule(img, cx - dx * half_len, cy - dy * half_len, cx + dx * half_len, cy + dy * half_len, radius)


def _grid_city(img, rng, size):
    """Orthogonal grid: two perpendicular line families, random spacing/rotation."""
    theta = rng.uniform(0.0, math.pi / 2)
    spacing = rng.uniform(size / 13, size / 9.5)
    phase = rng.uniform(0.0, spacing)
    radius = rng.uniform(0.95, 1.15)
    cx, cy = size / 2, size / 2
    reach = size  # long enough to cross the canvas at any rotation
    for direction in range(2):
        ang = theta + direction * math.pi / 2
        dx, dy = math.cos(ang), math.sin(ang)
        nx, ny = -dy, dx
        k = 0
        while (k - 1) * spacing < size * 0.75:
            for sign in (1, -1) if k else (1,):
                offset = phase + sign * k * spacing - spacing / 2
                _clipped_line(img, cx + nx * offset, cy + ny * offset, dx, dy, reach, radius)
            k += 1


def _radial_city(img, rng, size):
    """Concentric rings plus spokes out of a jittered center.

    The ring count is fixed: letting it vary makes mid-gap and tight-gap
    webs look like different families to the embedding.
    """
    # The center stays put: jittering it shifts every ring coherently, which
    # reads as a couple of strong global degrees of freedom in embedding
    # space; per-ring and per-vertex noise below supplies the variety.
    cx, cy = size / 2, size / 2
    ring_gap = rng.uniform(size / 10.0, size / 9.7)
    radius = rng.uniform(0.95, 1.05)
    for ring in range(1, 7):
        r = ring * ring_gap * (1.0 + rng.normal(0.0, 0.025))
        steps = max(12, int(r * 1.2))
        angles = np.linspace(0.0, 2 * math.pi, steps + 1) + rng.uniform(0, 2 * math.pi)
        # Independent vertex wobble keeps the rings hand-drawn rather than
        # geometric; without it the family's images differ only through a
        # few global parameters and collapse onto a thin embedding sheet.
        xs = cx + r * np.cos(angles) + rng.normal(0.0, 0.85, angles.shape)
        ys = cy + r * np.sin(angles) + rng.normal(0.0, 0.85, angles.shape)
        for i in range(steps):
            _stamp_capsule(img, xs[i], ys[i], xs[i + 1], ys[i + 1], radius)
    rot = rng.uniform(0.0, 2 * math.pi)
    for s in range(6):
        ang = rot + 2 * math.pi * s / 6
        _clipped_line(
            img, cx + math.cos(ang) * size * 0.22, cy + math.sin(ang) * size * 0.22,
            math.cos(ang), math.sin(ang), size * 0.22, radius * 0.9,
        )
    # Short connector streets between neighboring rings at random bearings.
    for _ in range(8):
        ring = rng.integers(1, 6)
        ang = rng.uniform(0.0, 2 * math.pi)
        r0 = ring * ring_gap
        x0, y0 = cx + math.cos(ang) * r0, cy + math.sin(ang) * r0
        x1, y1 = cx + math.cos(ang) * (r0 + ring_gap), cy + math.sin(ang) * (r0 + ring_gap)
        _stamp_capsule(img, x0, y0, x1, y1, radius * 0.9)


def _organic_city(img, rng, size):
    """Meandering random-walk streets: curly, mid-density, unaligned."""
    radius = rng.uniform(0.9, 1.05)
    # One short walk per cell of a 5x5 lattice. Walks that stay near their
    # cell give every image the same uniform curl texture; long wandering
    # walks give each image its own large-scale layout, which scatters the
    # family across embedding space.
    cell = size / 5
    for gy in range(5):
        for gx in range(5):
            x = (gx + 0.5) * cell + rng.uniform(-cell / 3, cell / 3)
            y = (gy + 0.5) * cell + rng.uniform(-cell / 3, cell / 3)
            heading = rng.uniform(0.0, 2 * math.pi)
            for _ in range(int(rng.integers(9, 12))):
                step = rng.uniform(2.0, 2.6)
                heading += rng.normal(0.0, 0.55)
                nx, ny = x + math.cos(heading) * step, y + math.sin(heading) * step
                _stamp_capsule(img, x, y, nx, ny, radius)
                x, y = nx, ny
                if not (0 <= x <= size and 0 <= y <= size):
                    break


def _sparse_roads(img, rng, size):
    """A handful of long, gently curved rural roads with short spurs."""
    radius = rng.uniform(0.8, 1.0)
    for _ in range(2):
        edge_angle = rng.uniform(0.0, 2 * math.pi)
        # Each road gets its own gentle bend and a sideways offset so the
        # family varies in road geometry, not just in bearing.
        curvature = rng.normal(0.0, 0.03)
        shift = rng.uniform(-0.15, 0.15) * size
        x = size / 2 + math.cos(edge_angle) * size * 0.6 - math.sin(edge_angle) * shift
        y = size / 2 + math.sin(edge_angle) * size * 0.6 + math.cos(edge_angle) * shift
        heading = edge_angle + math.pi + rng.uniform(-0.3, 0.3)
        pace = rng.uniform(3.5, 6.5)
        for _ in range(int(rng.integers(28, 41))):
            step = pace + rng.uniform(-0.5, 0.5)
            heading += curvature + rng.normal(0.0, 0.08)
            nx, ny = x + math.cos(heading) * step, y + math.sin(heading) * step
            _stamp_capsule(img, x, y, nx, ny, radius)
            x, y = nx, ny
    for _ in range(int(rng.integers(2, 4))):
        sx, sy = rng.uniform(0, size, size=2)
        ang = rng.uniform(0.0, 2 * math.pi)
        _clipped_line(img, sx, sy, math.cos(ang), math.sin(ang), rng.uniform(3, 9), radius)


_GENERATORS = {
    "grid": _grid_city,
    "radial": _radial_city,
    "organic": _organic_city,
    "sparse": _sparse_roads,
}


def synth_image(family: str, seed, size: int = 64) -> np.ndarray:
    """One binary street image of the given family; same seed, same bytes."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size), dtype=np.uint8)
    _GENERATORS[family](img, rng, size)
    return img


def make_synthetic_corpus(
    n: int, seed: int, size: int = 64
) -> tuple[list[RasterImage], CorpusManifest, dict[str, str]]:
    """n labeled street images cycling through the four families.

    Returns (images, manifest, labels). Places get deterministic fake
    coordinates on a lattice so map exports work end to end; labels maps
    place_id -> family name.
    """
    if n < 4:
        raise ValueError(f"need at least one image per family, got n={n}")
    images, places, labels = [], [], {}
    for i in range(n):
        family = FAMILIES[i % len(FAMILIES)]
        pid = f"synth-{i:05d}"
        pixels = synth_image(family, (seed, i), size=size)
        images.append(RasterImage(pid, size, size, pixels))
        lat = 20.0 + (i // 40) * 0.5
        lon = -120.0 + (i % 40) * 0.5
        places.append(PlaceRecord(pid, f"{family} #{i}", "town", lat, lon))
        labels[pid] = family
    return images, CorpusManifest(places, source_digest="synthetic"), labels


def write_labels(path, labels: dict[str, str]):
    Path(path).write_text(json.dumps(labels, sort_keys=True, separators=(",", ":")) + "\n")


def read_labels(path) -> dict[str, str]:
    return json.loads(Path(path).read_text())


def write_corpus(images, pack_path, index_path):
    write_image_pack(pack_path, index_path, images)
