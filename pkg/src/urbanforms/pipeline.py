"""Staged artifact pipeline: digest-checked stages with atomic, reproducible outputs.

Each stage reads earlier artifacts from the artifact directory, writes its own
files through a staging directory (temp + rename), and records a report with
content digests so a rerun can prove freshness and skip the work. Wall time
lives only in the reports: for a given configuration the artifacts themselves
are byte-stable across runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cae import (
    CaeConfig,
    TrainConfig,
    UrbanVector,
    build_model,
    extract_urban_vectors,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .exporters import (
    export_geomap,
    export_histogram,
    export_spectrum_montage,
    write_geojson,
    write_montage_manifest,
    write_montage_png,
)
from .knn import build_index, read_index, write_index
from .osm import (
    CorpusManifest,
    ParseStats,
    filter_places,
    parse_osm_file,
    read_manifest,
    read_roads,
    write_manifest,
    write_roads,
)
from .raster import (
    RenderStyle,
    is_effectively_empty,
    read_image_pack,
    render_place,
    segment_touches_bbox,
    viewport_bbox,
    write_image_pack,
)
from .som import (
    SomConfig,
    cluster_report,
    color_map,
    load_som,
    save_som,
    train_som,
    write_cluster_csv,
    write_histogram_json,
)
from .synth import make_synthetic_corpus, write_corpus, write_labels
from .topology import build_graph, sweep, write_graph_json, write_graphml, write_sweep_json

log = logging.getLogger("urbanforms.pipeline")

# artifact file names, shared with the service and the CLI
MANIFEST = "places.manifest"
ROADS = "roads.msrd"
IMAGES = "images.msim"
IMAGE_INDEX = "images.index.json"
LABELS = "labels.json"
MODEL = "model.msck"
VECTORS = "vectors.msvx"
INDEX = "index.msvx"
SOM_STRIP = "som_strip.msom"
SOM_GRID = "som_grid.msom"
CLUSTERS = "clusters.csv"
HISTOGRAM_JSON = "histogram.json"
GRAPH_GRAPHML = "graph.graphml"
GRAPH_JSON = "graph.json"
SWEEP_JSON = "sweep.json"
GEOMAP = "geomap.geojson"
MONTAGE_PNG = "montage.png"
MONTAGE_JSON = "montage.json"
HISTOGRAM_CSV = "histogram.csv"

STAGES = ("ingest", "rasterize", "synth", "train", "embed", "index", "som", "topology", "export", "serve")


class PipelineError(RuntimeError):
    """User-actionable pipeline failure: bad stage, missing prerequisite, held lock."""


def default_sweep() -> tuple[float, ...]:
    return tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of the pipeline in one serializable bundle.

    The artifact directory is deliberately not part of to_dict()/digest():
    it names where outputs land, not what they are, so moving an artifact
    tree must not invalidate its stage reports.
    """

    artifact_dir: str = "artifacts"
    seed: int = 0
    source_kind: str = "synthetic"  # "synthetic" | "osm"
    osm_path: str | None = None
    place_classes: tuple[str, ...] = ("city", "town", "village")
    synth_count: int = 400
    image_size: int = 256
    style: RenderStyle = field(default_factory=RenderStyle)
    min_set_fraction: float = 0.001
    cae: CaeConfig = field(default_factory=CaeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    som_strip: SomConfig = field(default_factory=lambda: SomConfig("strip_1d", 64, epochs=40))
    som_grid: SomConfig = field(default_factory=lambda: SomConfig("grid_2d", (8, 8), epochs=40))
    drop_first: bool = False
    drop_mode: str = "index0"
    threshold: float = 0.8
    sweep_thresholds: tuple[float, ...] = field(default_factory=default_sweep)
    port: int = 8765
    cors_origin: str = "*"

    def __post_init__(self):
        if self.source_kind not in ("synthetic", "osm"):
            raise ValueError(f"source kind must be 'synthetic' or 'osm', got {self.source_kind!r}")
        if self.synth_count < 4:
            raise ValueError(f"synthetic corpus needs at least 4 images, got {self.synth_count}")
        if self.image_size != self.cae.input_size:
            raise ValueError(
                f"raster size {self.image_size} does not match the model input size {self.cae.input_size}"
            )
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold {self.threshold} outside [0, 1]")
        object.__setattr__(self, "place_classes", tuple(self.place_classes))
        object.__setattr__(self, "sweep_thresholds", tuple(float(t) for t in self.sweep_thresholds))
        if not self.sweep_thresholds or list(self.sweep_thresholds) != sorted(set(self.sweep_thresholds)):
            raise ValueError("sweep thresholds must be non-empty and strictly ascending")
        if any(not 0.0 <= t <= 1.0 for t in self.sweep_thresholds):
            raise ValueError("sweep thresholds must lie in [0, 1]")
        if self.drop_mode not in ("index0", "lowest_mass"):
            raise ValueError(f"unknown drop_mode {self.drop_mode!r}")
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port {self.port} outside [1, 65535]")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "source": {
                "kind": self.source_kind,
                "osm_path": self.osm_path,
                "place_classes": list(self.place_classes),
                "count": self.synth_count,
            },
            "raster": {
                "size": self.image_size,
                "zoom": self.style.zoom,
                "supersample": self.style.supersample,
                "stroke_width_px": dict(sorted(self.style.stroke_width_px.items())),
                "min_set_fraction": self.min_set_fraction,
            },
            "cae": self.cae.to_dict(),
            "train": self.train.to_dict(),
            "som": {
                "strip": self.som_strip.to_dict(),
                "grid": self.som_grid.to_dict(),
                "drop_first": self.drop_first,
                "drop_mode": self.drop_mode,
            },
            "topology": {"threshold": self.threshold, "sweep": list(self.sweep_thresholds)},
            "service": {"port": self.port, "cors_origin": self.cors_origin},
        }

    @classmethod
    def from_dict(cls, d: dict, artifact_dir: str | None = None) -> "PipelineConfig":
        defaults = {
            "source": {}, "raster": {}, "cae": None, "train": None, "som": {},
            "topology": {}, "service": {},
        }
        merged = {**defaults, **d}
        source = merged["source"] or {}
        raster = merged["raster"] or {}
        som = merged["som"] or {}
        topo = merged["topology"] or {}
        service = merged["service"] or {}
        style_kwargs = {}
        if "zoom" in raster:
            style_kwargs["zoom"] = raster["zoom"]
        if "supersample" in raster:
            style_kwargs["supersample"] = raster["supersample"]
        if "stroke_width_px" in raster:
            style_kwargs["stroke_width_px"] = dict(raster["stroke_width_px"])
        kwargs = dict(
            seed=merged.get("seed", 0),
            source_kind=source.get("kind", "synthetic"),
            osm_path=source.get("osm_path"),
            place_classes=tuple(source.get("place_classes", ("city", "town", "village"))),
            synth_count=source.get("count", 400),
            image_size=raster.get("size", 256),
            style=RenderStyle(**style_kwargs),
            min_set_fraction=raster.get("min_set_fraction", 0.001),
            cae=CaeConfig.from_dict({**CaeConfig().to_dict(), **(merged["cae"] or {})}),
            train=TrainConfig.from_dict({**TrainConfig().to_dict(), **(merged["train"] or {})}),
            som_strip=SomConfig.from_dict(
                {**SomConfig("strip_1d", 64, epochs=40).to_dict(), **(som.get("strip") or {})}
            ),
            som_grid=SomConfig.from_dict(
                {**SomConfig("grid_2d", (8, 8), epochs=40).to_dict(), **(som.get("grid") or {})}
            ),
            drop_first=som.get("drop_first", False),
            drop_mode=som.get("drop_mode", "index0"),
            threshold=topo.get("threshold", 0.8),
            sweep_thresholds=tuple(topo.get("sweep", default_sweep())),
            port=service.get("port", 8765),
            cors_origin=service.get("cors_origin", "*"),
        )
        if artifact_dir is not None:
            kwargs["artifact_dir"] = artifact_dir
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path, artifact_dir: str | None = None) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()), artifact_dir=artifact_dir)

    def canonical_bytes(self) -> bytes:
        return (json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n").encode()

    def digest(self) -> str:
        return "sha256:" + hashlib.sha256(self.canonical_bytes()).hexdigest()


# -- digests and reports -----------------------------------------------------


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def _dict_digest(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return "sha256:" + hashlib.sha256(blob).hexdigest()


def _atomic_write_bytes(path: Path, blob: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def _write_report(path: Path, report: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write_bytes(path, (json.dumps(report, sort_keys=True, separators=(",", ":")) + "\n").encode())


@contextmanager
def _exclusive_lock(art: Path):
    lock = art / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PipelineError(
            f"artifact directory {art} is locked by another stage ({lock}); remove the file if it is stale"
        ) from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


# -- stage wiring --------------------------------------------------------------


def _stage_config(config: PipelineConfig, stage: str) -> dict:
    full = config.to_dict()
    return {
        "ingest": {"source": full["source"]},
        "synth": {"seed": full["seed"], "count": full["source"]["count"], "size": full["raster"]["size"]},
        "rasterize": {"raster": full["raster"]},
        "train": {"seed": full["seed"], "cae": full["cae"], "train": full["train"]},
        "embed": {"cae": full["cae"]},
        "index": {},
        "som": {"som": full["som"]},
        "topology": {"som": full["som"], "topology": full["topology"]},
        "export": {"som": full["som"]},
        "serve": {"service": full["service"]},
    }[stage]


def _producers(config: PipelineConfig) -> dict[str, str]:
    synthetic = config.source_kind == "synthetic"
    return {
        MANIFEST: "synth" if synthetic else "ingest",
        ROADS: "ingest",
        IMAGES: "synth" if synthetic else "rasterize",
        IMAGE_INDEX: "synth" if synthetic else "rasterize",
        LABELS: "synth",
        MODEL: "train",
        VECTORS: "embed",
        INDEX: "index",
        SOM_STRIP: "som",
        SOM_GRID: "som",
    }


_STAGE_INPUTS: dict[str, tuple[str, ...]] = {
    "ingest": (),
    "synth": (),
    "rasterize": (MANIFEST, ROADS),
    "train": (IMAGES, IMAGE_INDEX),
    "embed": (MODEL, IMAGES, IMAGE_INDEX),
    "index": (VECTORS,),
    "som": (VECTORS,),
    "topology": (SOM_STRIP, VECTORS),
    "export": (MANIFEST, SOM_STRIP, SOM_GRID, VECTORS, IMAGES, IMAGE_INDEX),
    # the grid model is deliberately not required: the service starts without
    # it and answers /api/grid with 503 until the som stage has produced one
    "serve": (MANIFEST, INDEX, SOM_STRIP, IMAGES, IMAGE_INDEX),
}

_STAGE_OUTPUTS: dict[str, tuple[str, ...]] = {
    "ingest": (MANIFEST, ROADS),
    "synth": (MANIFEST, IMAGES, IMAGE_INDEX, LABELS),
    "rasterize": (IMAGES, IMAGE_INDEX),
    "train": (MODEL,),
    "embed": (VECTORS,),
    "index": (INDEX,),
    "som": (SOM_STRIP, SOM_GRID, CLUSTERS, HISTOGRAM_JSON),
    "topology": (GRAPH_GRAPHML, GRAPH_JSON, SWEEP_JSON),
    "export": (GEOMAP, MONTAGE_PNG, MONTAGE_JSON, HISTOGRAM_CSV),
    "serve": (),
}


def _read_vectors(art: Path) -> list[UrbanVector]:
    idx = read_index(art / VECTORS)
    return [UrbanVector(pid, row) for pid, row in zip(idx.place_ids, idx.matrix)]


def _read_batch(art: Path) -> tuple[np.ndarray, list[str]]:
    stacked, ids = read_image_pack(art / IMAGES, art / IMAGE_INDEX)
    return stacked.astype(np.float32)[..., None], ids


def _run_ingest(config: PipelineConfig, art: Path, out: Path) -> None:
    stats = ParseStats()
    places, segments = parse_osm_file(config.osm_path, stats)
    places = filter_places(places, config.place_classes)
    log.info("parsed %d places (%d kept) and %d road segments", len(places), len(places), len(segments))
    write_manifest(out / MANIFEST, CorpusManifest(places, stats.source_digest))
    write_roads(out / ROADS, segments)


def _run_synth(config: PipelineConfig, art: Path, out: Path) -> None:
    images, manifest, labels = make_synthetic_corpus(config.synth_count, config.seed, config.image_size)
    write_manifest(out / MANIFEST, manifest)
    write_corpus(images, out / IMAGES, out / IMAGE_INDEX)
    write_labels(out / LABELS, labels)


def _run_rasterize(config: PipelineConfig, art: Path, out: Path) -> None:
    manifest = read_manifest(art / MANIFEST)
    roads = read_roads(art / ROADS)
    kept, empty = [], 0
    for place in manifest.places:
        bbox = viewport_bbox(place.lat, place.lon, config.style, config.image_size)
        near = [seg for seg in roads if segment_touches_bbox(seg, bbox)]
        img = render_place(place, near, config.style, config.image_size)
        if is_effectively_empty(img, config.min_set_fraction):
            empty += 1
            continue
        kept.append(img)
    if not kept:
        raise PipelineError("rasterize produced no usable images (every viewport was effectively empty)")
    if empty:
        log.info("rasterize dropped %d effectively-empty places of %d", empty, len(manifest.places))
    write_image_pack(out / IMAGES, out / IMAGE_INDEX, kept)


def _run_train(config: PipelineConfig, art: Path, out: Path) -> None:
    batch, _ = _read_batch(art)
    model = build_model(config.cae, seed=config.seed)
    model, curve = train(model, batch, config.train)
    log.info("trained %d epochs, loss %.4f -> %.4f", config.train.epochs, curve[0], curve[-1])
    save_checkpoint(out / MODEL, model, tc=config.train, epoch=config.train.epochs, loss_curve=curve)


def _run_embed(config: PipelineConfig, art: Path, out: Path) -> None:
    model, _ = load_checkpoint(art / MODEL)
    batch, ids = _read_batch(art)
    vectors = extract_urban_vectors(model, batch, ids)
    write_index(out / VECTORS, build_index(vectors))


def _run_index(config: PipelineConfig, art: Path, out: Path) -> None:
    write_index(out / INDEX, read_index(art / VECTORS))


def _run_som(config: PipelineConfig, art: Path, out: Path) -> None:
    vectors = _read_vectors(art)
    strip = train_som(vectors, config.som_strip)
    grid = train_som(vectors, config.som_grid)
    report = cluster_report(strip, vectors, drop_first=config.drop_first, drop_mode=config.drop_mode)
    save_som(out / SOM_STRIP, strip)
    save_som(out / SOM_GRID, grid)
    write_cluster_csv(out / CLUSTERS, strip, report)
    write_histogram_json(out / HISTOGRAM_JSON, report)


def _strip_report(config: PipelineConfig, art: Path):
    strip = load_som(art / SOM_STRIP)
    vectors = _read_vectors(art)
    return strip, vectors, cluster_report(strip, vectors, drop_first=config.drop_first, drop_mode=config.drop_mode)


def _run_topology(config: PipelineConfig, art: Path, out: Path) -> None:
    strip, _, report = _strip_report(config, art)
    graph = build_graph(strip, report, config.threshold)
    write_graphml(out / GRAPH_GRAPHML, graph)
    write_graph_json(out / GRAPH_JSON, graph)
    write_sweep_json(out / SWEEP_JSON, sweep(strip, report, list(config.sweep_thresholds)))


def _run_export(config: PipelineConfig, art: Path, out: Path) -> None:
    strip, vectors, report = _strip_report(config, art)
    manifest = read_manifest(art / MANIFEST)
    write_geojson(out / GEOMAP, export_geomap(manifest, report, color_map(strip)))
    (out / HISTOGRAM_CSV).write_text(export_histogram(report))
    grid = load_som(art / SOM_GRID)
    grid_report = cluster_report(grid, vectors, drop_first=False)
    stacked, ids = read_image_pack(art / IMAGES, art / IMAGE_INDEX)
    images = {pid: stacked[i] for i, pid in enumerate(ids)}
    montage, cells = export_spectrum_montage(grid, grid_report, vectors, images)
    write_montage_png(out / MONTAGE_PNG, montage)
    write_montage_manifest(out / MONTAGE_JSON, cells)


_RUNNERS = {
    "ingest": _run_ingest,
    "synth": _run_synth,
    "rasterize": _run_rasterize,
    "train": _run_train,
    "embed": _run_embed,
    "index": _run_index,
    "som": _run_som,
    "topology": _run_topology,
    "export": _run_export,
}


# -- the orchestrator ------------------------------------------------------------


def _check_inputs(stage: str, config: PipelineConfig, art: Path) -> dict[str, str]:
    """Digests of the stage's input files; raises naming the stage to run first."""
    digests: dict[str, str] = {}
    if stage == "ingest":
        if not config.osm_path:
            raise PipelineError("ingest needs source.osm_path in the configuration")
        path = Path(config.osm_path)
        if not path.exists():
            raise PipelineError(f"OSM input not found: {path}")
        digests[str(path)] = _file_digest(path)
        return digests
    producers = _producers(config)
    for name in _STAGE_INPUTS[stage]:
        path = art / name
        if not path.exists():
            raise PipelineError(
                f"{producers[name]} required: {name} is missing from {art} "
                f"(run the {producers[name]!r} stage first)"
            )
        digests[name] = _file_digest(path)
    return digests


def _up_to_date(report_path: Path, cfg_digest: str, in_digests: dict, art: Path, outputs: tuple[str, ...]) -> dict | None:
    if not report_path.exists():
        return None
    try:
        old = json.loads(report_path.read_text())
    except (OSError, json.JSONDecodeError):
        return None
    if old.get("config_digest") != cfg_digest or old.get("input_digests") != in_digests:
        return None
    recorded = old.get("output_digests", {})
    if set(recorded) != set(outputs):
        return None
    for name in outputs:
        path = art / name
        if not path.exists() or _file_digest(path) != recorded[name]:
            return None
    return old


def _write_effective_config(art: Path, config: PipelineConfig) -> None:
    target = art / "config.json"
    blob = config.canonical_bytes()
    if not target.exists() or target.read_bytes() != blob:
        _atomic_write_bytes(target, blob)


def run_stage(stage: str, config: PipelineConfig, artifact_dir: str | Path | None = None) -> dict:
    """Run one pipeline stage and return its report dict.

    A stage whose config digest, input digests, and output digests all match
    its previous report is skipped with status "up-to-date".
    """
    if stage not in STAGES:
        raise PipelineError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    art = Path(artifact_dir or config.artifact_dir)
    art.mkdir(parents=True, exist_ok=True)

    if stage == "serve":
        _check_inputs(stage, config, art)
        from .service import run_service  # deferred so the pipeline works without the service stack

        run_service(config, art)
        return {"stage": "serve", "status": "completed"}

    with _exclusive_lock(art):
        _write_effective_config(art, config)
        in_digests = _check_inputs(stage, config, art)
        cfg_digest = _dict_digest(_stage_config(config, stage))
        outputs = _STAGE_OUTPUTS[stage]
        report_path = art / "reports" / f"{stage}.json"

        old = _up_to_date(report_path, cfg_digest, in_digests, art, outputs)
        if old is not None:
            report = {**old, "status": "up-to-date", "wall_time_s": 0.0}
            _write_report(report_path, report)
            log.info("stage %s is up-to-date", stage)
            return report

        t0 = time.monotonic()
        staging = art / ".staging" / stage
        if staging.exists():
            shutil.rmtree(staging)
        staging.mkdir(parents=True)
        try:
            _RUNNERS[stage](config, art, staging)
            produced = {p.name for p in staging.iterdir()}
            if produced != set(outputs):
                raise PipelineError(
                    f"stage {stage} wrote {sorted(produced)} instead of the declared {sorted(outputs)}"
                )
            for name in outputs:
                os.replace(staging / name, art / name)
        finally:
            shutil.rmtree(staging, ignore_errors=True)
            try:
                staging.parent.rmdir()
            except OSError:
                pass

        report = {
            "stage": stage,
            "status": "completed",
            "config_digest": cfg_digest,
            "input_digests": in_digests,
            "output_digests": {name: _file_digest(art / name) for name in outputs},
            "wall_time_s": round(time.monotonic() - t0, 3),
        }
        _write_report(report_path, report)
        log.info("stage %s completed in %.1fs", stage, report["wall_time_s"])
        return report


def run_pipeline(config: PipelineConfig, artifact_dir: str | Path | None = None) -> list[dict]:
    """Run every artifact-producing stage for the configured source, in order."""
    first = ("synth",) if config.source_kind == "synthetic" else ("ingest", "rasterize")
    reports = []
    for stage in first + ("train", "embed", "index", "som", "topology", "export"):
        reports.append(run_stage(stage, config, artifact_dir))
    return reports
