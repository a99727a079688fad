"""Read-only HTTP API over a finished artifact directory.

Everything is loaded into memory once at startup and never mutated, so
request handling needs no locks and identical requests return identical
bodies. Memory cost is dominated by the image store: roughly
count * size^2 bytes (a 10,000-place corpus of 256x256 bitmaps is ~650 MB),
plus count * 640 floats for the vectors.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from PIL import Image

from .cae import UrbanVector
from .exporters import export_geomap, export_spectrum_montage
from .knn import VectorIndex, knn_by_id, read_index
from .osm import CorpusManifest, PlaceRecord, read_manifest
from .pipeline import (
    IMAGE_INDEX,
    IMAGES,
    INDEX,
    MANIFEST,
    SOM_GRID,
    SOM_STRIP,
    PipelineConfig,
    PipelineError,
)
from .raster import read_image_pack
from .som import ClusterReport, SomModel, cluster_report, color_hex, color_map, load_som

log = logging.getLogger("urbanforms.service")

SCHEMA_VERSION = 1
MAX_K = 100
DEFAULT_PAGE = 50
MAX_PAGE = 500


@dataclass(frozen=True)
class ServiceState:
    """Every artifact the endpoints read, loaded immutable at startup."""

    manifest: CorpusManifest
    places: dict[str, PlaceRecord]
    index: VectorIndex
    strip: SomModel
    strip_report: ClusterReport
    colors: dict[int, tuple[int, int, int]]
    images: np.ndarray  # [count, size, size] uint8 in {0, 1}
    image_row: dict[str, int]
    grid: SomModel | None
    grid_manifest: dict | None  # rows/cols/cell_size/cells + member counts


def load_state(config: PipelineConfig, artifact_dir: str | Path | None = None) -> ServiceState:
    art = Path(artifact_dir if artifact_dir is not None else config.artifact_dir)
    manifest = read_manifest(art / MANIFEST)
    places = {p.place_id: p for p in manifest.places}
    index = read_index(art / INDEX)
    stacked, image_ids = read_image_pack(art / IMAGES, art / IMAGE_INDEX)
    image_row = {pid: i for i, pid in enumerate(image_ids)}

    dangling_places = sorted(pid for pid in index.place_ids if pid not in places)
    if dangling_places:
        raise PipelineError(
            f"{len(dangling_places)} indexed place ids missing from the manifest, "
            f"first: {dangling_places[0]}"
        )
    dangling_images = sorted(pid for pid in index.place_ids if pid not in image_row)
    if dangling_images:
        raise PipelineError(
            f"{len(dangling_images)} indexed place ids missing from the image store, "
            f"first: {dangling_images[0]}"
        )

    vectors = [UrbanVector(pid, row) for pid, row in zip(index.place_ids, index.matrix)]
    strip = load_som(art / SOM_STRIP)
    strip_report = cluster_report(
        strip, vectors, drop_first=config.drop_first, drop_mode=config.drop_mode
    )

    grid = None
    grid_manifest = None
    if (art / SOM_GRID).exists():
        grid = load_som(art / SOM_GRID)
        grid_report = cluster_report(grid, vectors, drop_first=False)
        images = {pid: stacked[image_row[pid]] for pid in index.place_ids}
        _, cells = export_spectrum_montage(grid, grid_report, vectors, images)
        grid_manifest = _grid_manifest(grid, grid_report, cells)

    log.info(
        "loaded %d places, %d vectors of dim %d, strip of %d nodes, grid %s",
        len(places), len(index.place_ids), index.dim, strip.config.n_nodes,
        "absent" if grid is None else "x".join(map(str, grid.config.node_count)),
    )
    return ServiceState(
        manifest=manifest,
        places=places,
        index=index,
        strip=strip,
        strip_report=strip_report,
        colors=color_map(strip),
        images=stacked,
        image_row=image_row,
        grid=grid,
        grid_manifest=grid_manifest,
    )


def _grid_manifest(grid: SomModel, report: ClusterReport, cells: dict) -> dict:
    rows, cols = grid.config.node_count
    node_of = {(int(r), int(c)): n for n, (r, c) in enumerate(grid.grid_coords)}
    out_cells = []
    for r in range(rows):
        row = []
        for c in range(cols):
            node = node_of[(r, c)]
            row.append(
                {
                    "node": node,
                    "representative": cells["cells"][r][c],
                    "member_count": report.histogram[node],
                }
            )
        out_cells.append(row)
    return {
        "rows": rows,
        "cols": cols,
        "cell_size": cells["cell_size"],
        "cells": out_cells,
    }


# -- response plumbing --------------------------------------------------------


def _canonical(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def _json(payload: dict, status: int = 200, headers: dict | None = None) -> Response:
    body = _canonical({"schema_version": SCHEMA_VERSION, **payload})
    return Response(content=body, status_code=status, media_type="application/json", headers=headers)


def _error(status: int, code: str, message: str) -> Response:
    return _json({"code": code, "message": message}, status=status)


def _place_payload(place: PlaceRecord) -> dict:
    return {
        "place_id": place.place_id,
        "name": place.name,
        "place_class": place.place_class,
        "lat": place.lat,
        "lon": place.lon,
        "image_url": f"/api/image/{place.place_id}",
    }


# -- application --------------------------------------------------------------


def create_app(config: PipelineConfig, artifact_dir: str | Path | None = None) -> FastAPI:
    state = load_state(config, artifact_dir)
    app = FastAPI(title="urbanforms", docs_url=None, redoc_url=None, openapi_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[config.cors_origin],
        allow_methods=["GET"],
        allow_headers=["*"],
    )

    @app.get("/api/similar")
    def similar(place_id: str | None = None, k: str = "6") -> Response:
        if place_id is None:
            return _error(400, "bad_request", "place_id query parameter is required")
        if place_id not in state.index:
            return _error(404, "unknown_place", f"place id {place_id!r} not in index")
        try:
            k_val = int(k)
        except ValueError:
            return _error(400, "bad_k", f"k must be an integer, got {k!r}")
        if not 1 <= k_val <= MAX_K:
            return _error(400, "bad_k", f"k must be between 1 and {MAX_K}, got {k_val}")
        try:
            result = knn_by_id(state.index, place_id, k=k_val, exclude_self=True)
        except ValueError as exc:
            return _error(400, "bad_k", str(exc))
        neighbors = [
            {**_place_payload(state.places[pid]), "distance": dist}
            for pid, dist in result.neighbors
        ]
        return _json(
            {
                "query": _place_payload(state.places[place_id]),
                "k": k_val,
                "neighbors": neighbors,
            }
        )

    @app.get("/api/grid")
    def grid(request: Request) -> Response:
        if state.grid_manifest is None:
            return _error(503, "grid_unavailable", "no grid model in the artifact directory")
        body = _canonical({"schema_version": SCHEMA_VERSION, **state.grid_manifest})
        etag = '"sha256:' + hashlib.sha256(body).hexdigest() + '"'
        headers = {"ETag": etag, "Cache-Control": "public, max-age=3600"}
        if request.headers.get("if-none-match") == etag:
            return Response(status_code=304, headers=headers)
        return Response(content=body, media_type="application/json", headers=headers)

    @app.get("/api/cluster/{node}")
    def cluster(node: str, limit: str = str(DEFAULT_PAGE), offset: str = "0") -> Response:
        try:
            node_val = int(node)
        except ValueError:
            return _error(404, "unknown_node", f"node {node!r} is not an index")
        if not 0 <= node_val < state.strip.config.n_nodes:
            return _error(
                404,
                "unknown_node",
                f"node {node_val} out of range [0, {state.strip.config.n_nodes - 1}]",
            )
        try:
            limit_val, offset_val = int(limit), int(offset)
        except ValueError:
            return _error(400, "bad_page", "limit and offset must be integers")
        if not 1 <= limit_val <= MAX_PAGE or offset_val < 0:
            return _error(
                400, "bad_page", f"need 1 <= limit <= {MAX_PAGE} and offset >= 0"
            )
        dropped = set(state.strip_report.dropped_place_ids)
        member_ids = [
            pid
            for pid, assigned in state.strip_report.assignments.items()
            if assigned == node_val and pid not in dropped
        ]
        code = state.strip.codebook[node_val].astype(np.float64)
        def distance_to_code(pid: str) -> float:
            diff = state.index.vector_for(pid).astype(np.float64) - code
            return float(np.sqrt(diff @ diff))
        ranked = sorted(((distance_to_code(pid), pid) for pid in member_ids))
        page = ranked[offset_val : offset_val + limit_val]
        members = [
            {**_place_payload(state.places[pid]), "distance": dist} for dist, pid in page
        ]
        return _json(
            {
                "node": node_val,
                "color_hex": color_hex(state.colors[node_val]),
                "total": len(ranked),
                "limit": limit_val,
                "offset": offset_val,
                "members": members,
            }
        )

    @app.get("/api/image/{place_id}")
    def image(place_id: str) -> Response:
        row = state.image_row.get(place_id)
        if row is None:
            return _error(404, "unknown_place", f"no image for place id {place_id!r}")
        bitmap = state.images[row]
        pixels = 255 - np.clip(bitmap, 0, 1).astype(np.uint8) * 255  # roads black on white
        buffer = io.BytesIO()
        Image.fromarray(pixels, mode="L").save(buffer, format="PNG")
        return Response(content=buffer.getvalue(), media_type="image/png")

    @app.get("/api/geomap")
    def geomap(bbox: str | None = None) -> Response:
        box = None
        if bbox is not None:
            parts = bbox.split(",")
            try:
                values = tuple(float(p) for p in parts)
            except ValueError:
                values = ()
            if len(values) != 4 or values[0] > values[2] or values[1] > values[3]:
                return _error(
                    400, "bad_bbox", "bbox must be min_lon,min_lat,max_lon,max_lat"
                )
            box = values
        document = export_geomap(state.manifest, state.strip_report, state.colors, bbox=box)
        return _json(document)

    return app


def run_service(config: PipelineConfig, artifact_dir: str | Path | None = None) -> None:
    import uvicorn

    app = create_app(config, artifact_dir)
    log.info("serving on port %d (CORS origin %s)", config.port, config.cors_origin)
    uvicorn.run(app, host="127.0.0.1", port=config.port, log_level="warning")
