"""Presentation artifacts: geo color maps, spectrum montages, histograms.

Everything here is a pure function from trained models and reports to
machine-readable documents (GeoJSON, PNG + JSON, CSV), written so identical
inputs always produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .cae import UrbanVector
from .osm import CorpusManifest
from .som import ClusterReport, SomModel, color_hex


class ExportError(ValueError):
    pass


def export_geomap(
    manifest: CorpusManifest,
    report: ClusterReport,
    colors: Mapping[int, tuple[int, int, int]],
    bbox: tuple[float, float, float, float] | None = None,
) -> dict:
    """GeoJSON FeatureCollection of assigned places as colored points.

    Coordinates follow GeoJSON order (longitude first). Places dropped from
    the report are omitted; `bbox` is an optional inclusive
    (min_lon, min_lat, max_lon, max_lat) filter. Every assigned place must
    exist in the manifest.
    """
    places = {p.place_id: p for p in manifest.places}
    dropped = set(report.dropped_place_ids)
    unknown = sorted(pid for pid in report.assignments if pid not in places and pid not in dropped)
    if unknown:
        raise ExportError(f"place ids missing from the manifest: {', '.join(unknown)}")
    features = []
    for pid in sorted(report.assignments):
        if pid in dropped:
            continue
        place = places[pid]
        if bbox is not None:
            min_lon, min_lat, max_lon, max_lat = bbox
            if not (min_lon <= place.lon <= max_lon and min_lat <= place.lat <= max_lat):
                continue
        node = report.assignments[pid]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [place.lon, place.lat]},
                "properties": {"place_id": pid, "node": node, "color": color_hex(colors[node])},
            }
        )
    return {"type": "FeatureCollection", "features": features}


def write_geojson(path, document: dict):
    Path(path).write_text(json.dumps(document, sort_keys=True, separators=(",", ":")) + "\n")


def export_spectrum_montage(
    model: SomModel,
    report: ClusterReport,
    vectors: Sequence[UrbanVector],
    images: Mapping[str, np.ndarray],
) -> tuple[np.ndarray, dict]:
    """One representative image per grid cell, assembled into a single bitmap.

    The representative is the member whose vector is closest to the cell's
    codebook row (ties to the lowest place_id). Cells with no members stay
    blank and appear as null in the manifest. Returns (montage, manifest)
    where the montage is uint8 grayscale with roads drawn black on white.
    """
    if model.config.topology != "grid_2d":
        raise ValueError("montage export needs a grid_2d model")
    rows, cols = model.config.node_count
    by_id = {v.place_id: v for v in vectors}
    dropped = set(report.dropped_place_ids)
    members: dict[int, list[str]] = {}
    for pid, node in sorted(report.assignments.items()):
        if pid not in dropped:
            members.setdefault(node, []).append(pid)

    cell_size = None
    for img in images.values():
        cell_size = img.shape[0]
        break
    if cell_size is None:
        raise ExportError("no images supplied")

    montage = np.full((rows * cell_size, cols * cell_size), 255, dtype=np.uint8)
    cells: list[list[str | None]] = [[None] * cols for _ in range(rows)]
    codebook = model.codebook.astype(np.float64)
    for node, pids in members.items():
        best_pid, best_d2 = None, np.inf
        for pid in pids:
            if pid not in by_id:
                raise ExportError(f"no vector available for place {pid}")
            diff = by_id[pid].values.astype(np.float64) - codebook[node]
            d2 = float(diff @ diff)
            if d2 < best_d2:
                best_pid, best_d2 = pid, d2
        if best_pid not in images:
            raise ExportError(f"no image available for representative place {best_pid}")
        img = np.asarray(images[best_pid], dtype=np.uint8)
        if img.shape != (cell_size, cell_size):
            raise ExportError(
                f"image for {best_pid} has shape {img.shape}, expected {(cell_size, cell_size)}"
            )
        r, c = model.grid_coords[node]
        block = 255 - np.clip(img, 0, 1) * 255  # set pixels (roads) in black
        montage[r * cell_size : (r + 1) * cell_size, c * cell_size : (c + 1) * cell_size] = block
        cells[r][c] = best_pid
    manifest = {"rows": rows, "cols": cols, "cell_size": cell_size, "cells": cells}
    return montage, manifest


def write_montage_png(path, montage: np.ndarray):
    Image.fromarray(montage, mode="L").save(path, format="PNG")


def write_montage_manifest(path, manifest: dict):
    Path(path).write_text(json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n")


def export_histogram(report: ClusterReport) -> str:
    """CSV of per-node member counts, zero-count nodes included.

    The dropped column flags the node whose members were set aside, which
    keeps its zero count distinguishable from a genuinely empty node.
    """
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["node_index", "count", "dropped"])
    for node, count in enumerate(report.histogram):
        flagged = report.dropped_first_cluster and node == report.dropped_node
        writer.writerow([node, count, "true" if flagged else "false"])
    return out.getvalue()
