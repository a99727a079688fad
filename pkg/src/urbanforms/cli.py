"""Command-line front end: one subcommand per pipeline stage, plus query.

Logs go to stderr; each stage prints its report JSON on stdout. Exit codes:
0 on success, 1 for user errors (bad flags, missing inputs, bad config),
2 for unexpected internal failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from .knn import knn, knn_by_id, read_index
from .pipeline import INDEX, PipelineConfig, PipelineError, run_stage

log = logging.getLogger("urbanforms.cli")


def parse_sweep(text: str) -> tuple[float, ...]:
    """\"0.5:0.95:0.05\" -> (0.5, 0.55, ..., 0.95), endpoints inclusive."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"sweep must look like start:stop:step, got {text!r}")
    start, stop, step = (float(p) for p in parts)
    if step <= 0 or stop < start:
        raise ValueError(f"sweep needs step > 0 and stop >= start, got {text!r}")
    values = []
    i = 0
    while True:
        t = round(start + i * step, 10)
        if t > stop + 1e-9:
            break
        values.append(t)
        i += 1
    return tuple(values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urbanforms", description="street-pattern embedding pipeline")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    parser.add_argument("--config", help="pipeline configuration JSON file")
    parser.add_argument("--artifact-dir", help="artifact directory (overrides the config)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse an OSM XML extract into manifest + roads")
    p.add_argument("--osm", help="path to the .osm or .osm.gz input")
    p.add_argument("--classes", help="comma-separated place classes to keep")

    p = sub.add_parser("rasterize", help="render every place to a binary street bitmap")
    p.add_argument("--zoom", type=int)
    p.add_argument("--size", type=int, help="output image side in pixels")
    p.add_argument("--supersample", type=int)
    p.add_argument("--min-set-fraction", type=float)

    p = sub.add_parser("synth", help="generate the labeled synthetic corpus")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--size", type=int)

    p = sub.add_parser("train", help="train the autoencoder on the packed images")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--optimizer", choices=("sgd_momentum", "adam"))
    p.add_argument("--seed", type=int)

    sub.add_parser("embed", help="encode every image into its urban vector")
    sub.add_parser("index", help="build the exact-knn index from the vectors")

    p = sub.add_parser("query", help="nearest neighbors for a place or raw vector")
    p.add_argument("--index", dest="index_path", help="index file (default: artifact dir)")
    p.add_argument("--place-id")
    p.add_argument("--vector-file", help=".npy or whitespace-separated floats")
    p.add_argument("-k", type=int, default=6)

    p = sub.add_parser("som", help="train the spectrum (strip) and montage (grid) maps")
    p.add_argument("--topology", choices=("strip", "grid"), default="strip",
                   help="which model the node/epoch/seed flags apply to")
    p.add_argument("--nodes", type=int, help="strip node count")
    p.add_argument("--rows", type=int, help="grid rows")
    p.add_argument("--cols", type=int, help="grid columns")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--drop-first", action="store_true", help="drop the first cluster from reports")

    p = sub.add_parser("topology", help="threshold graph and persistence sweep over the spectrum")
    p.add_argument("--threshold", type=float)
    p.add_argument("--sweep", help="start:stop:step, e.g. 0.5:0.95:0.05")

    sub.add_parser("export", help="write geomap, montage, and histogram files")

    p = sub.add_parser("serve", help="serve the artifacts over HTTP")
    p.add_argument("--port", type=int)
    p.add_argument("--cors-origin")
    return parser


def _load_config(args) -> PipelineConfig:
    if args.config:
        return PipelineConfig.from_file(args.config, artifact_dir=args.artifact_dir)
    if args.artifact_dir:
        return PipelineConfig(artifact_dir=args.artifact_dir)
    return PipelineConfig()


def _apply_overrides(config: PipelineConfig, args) -> PipelineConfig:
    updates: dict = {}
    cmd = args.command
    if cmd == "ingest":
        if args.osm:
            updates["source_kind"] = "osm"
            updates["osm_path"] = args.osm
        if args.classes:
            updates["place_classes"] = tuple(c.strip() for c in args.classes.split(",") if c.strip())
    elif cmd == "rasterize":
        style_updates = {}
        if args.zoom is not None:
            style_updates["zoom"] = args.zoom
        if args.supersample is not None:
            style_updates["supersample"] = args.supersample
        if style_updates:
            updates["style"] = replace(config.style, **style_updates)
        if args.size is not None:
            updates["image_size"] = args.size
        if args.min_set_fraction is not None:
            updates["min_set_fraction"] = args.min_set_fraction
    elif cmd == "synth":
        if args.count is not None:
            updates["synth_count"] = args.count
        if args.seed is not None:
            updates["seed"] = args.seed
        if args.size is not None:
            updates["image_size"] = args.size
    elif cmd == "train":
        train_updates = {}
        for flag, field_name in (
            ("epochs", "epochs"),
            ("batch_size", "batch_size"),
            ("learning_rate", "learning_rate"),
            ("optimizer", "optimizer"),
        ):
            value = getattr(args, flag)
            if value is not None:
                train_updates[field_name] = value
        if train_updates:
            updates["train"] = replace(config.train, **train_updates)
        if args.seed is not None:
            updates["seed"] = args.seed
    elif cmd == "som":
        target = "som_grid" if args.topology == "grid" else "som_strip"
        som_updates: dict = {}
        if args.topology == "grid":
            if args.nodes is not None:
                raise ValueError("--nodes applies to the strip; use --rows/--cols for the grid")
            if args.rows is not None or args.cols is not None:
                rows = args.rows if args.rows is not None else config.som_grid.node_count[0]
                cols = args.cols if args.cols is not None else config.som_grid.node_count[1]
                som_updates["node_count"] = (rows, cols)
        else:
            if args.rows is not None or args.cols is not None:
                raise ValueError("--rows/--cols apply to the grid; use --nodes for the strip")
            if args.nodes is not None:
                som_updates["node_count"] = args.nodes
        if args.epochs is not None:
            som_updates["epochs"] = args.epochs
        if args.seed is not None:
            som_updates["seed"] = args.seed
        if som_updates:
            updates[target] = replace(getattr(config, target), **som_updates)
        if args.drop_first:
            updates["drop_first"] = True
    elif cmd == "topology":
        if args.threshold is not None:
            updates["threshold"] = args.threshold
        if args.sweep:
            updates["sweep_thresholds"] = parse_sweep(args.sweep)
    elif cmd == "serve":
        port = args.port if args.port is not None else int(os.environ.get("MS_PORT", config.port))
        cors = args.cors_origin or os.environ.get("MS_CORS_ORIGIN") or config.cors_origin
        updates["port"] = port
        updates["cors_origin"] = cors
        if not args.artifact_dir and os.environ.get("MS_ARTIFACT_DIR"):
            updates["artifact_dir"] = os.environ["MS_ARTIFACT_DIR"]
    return replace(config, **updates) if updates else config


def _run_query(config: PipelineConfig, args) -> dict:
    if bool(args.place_id) == bool(args.vector_file):
        raise ValueError("query needs exactly one of --place-id or --vector-file")
    index_path = Path(args.index_path) if args.index_path else Path(config.artifact_dir) / INDEX
    if not index_path.exists():
        raise PipelineError(f"index required: {index_path} not found (run the 'index' stage first)")
    index = read_index(index_path)
    if args.place_id:
        result = knn_by_id(index, args.place_id, k=args.k, exclude_self=True)
    else:
        path = Path(args.vector_file)
        vector = np.load(path) if path.suffix == ".npy" else np.loadtxt(path)
        result = knn(index, vector, k=args.k)
    return {
        "query_id": result.query_id,
        "neighbors": [[pid, dist] for pid, dist in result.neighbors],
    }


def _dispatch(args) -> int:
    config = _apply_overrides(_load_config(args), args)
    if args.command == "query":
        payload = _run_query(config, args)
    else:
        payload = run_stage(args.command, config, config.artifact_dir)
    print(json.dumps(payload, sort_keys=True, separators=(",", ":")))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 for usage problems; fold those into the
        # user-error code and keep 0 for --help
        return 0 if exc.code == 0 else 1
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except (PipelineError, ValueError, KeyError, FileNotFoundError) as exc:
        message = exc.args[0] if exc.args else str(exc)
        print(f"error: {message}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception:
        traceback.print_exc(file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
