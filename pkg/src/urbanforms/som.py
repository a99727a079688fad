"""Self-organizing maps over urban vectors.

Two topologies: a 1-d strip whose node order doubles as a similarity-sorted
cluster numbering, and a 2-d grid used as a visual spectrum. Classic Kohonen
training (online by default, batch optionally) with Gaussian neighborhoods
and exponential radius/learning-rate decay; everything is seeded and the
update arithmetic is elementwise, so retraining reproduces codebooks
bit-identically.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cae import UrbanVector
from .tensor import read_tensor, write_tensor

SOM_MAGIC = b"MSOM"
SOM_VERSION = 1

# Fixed blue -> white -> red ramp anchors; the 256-entry table below is the
# only color source so cluster colors are bit-stable everywhere.
_RAMP_ANCHORS = ((59, 76, 192), (221, 221, 221), (180, 4, 38))


def _build_ramp() -> tuple[tuple[int, int, int], ...]:
    blue, white, red = _RAMP_ANCHORS
    table = []
    for i in range(256):
        t = i / 255.0
        if t <= 0.5:
            a, b, u = blue, white, t / 0.5
        else:
            a, b, u = white, red, (t - 0.5) / 0.5
        table.append(tuple(int(round(a[c] + (b[c] - a[c]) * u)) for c in range(3)))
    return tuple(table)


COLOR_RAMP: tuple[tuple[int, int, int], ...] = _build_ramp()


@dataclass(frozen=True)
class SomConfig:
    topology: str  # "strip_1d" | "grid_2d"
    node_count: int | tuple[int, int]
    epochs: int = 50
    initial_radius: float | None = None
    final_radius: float = 1.0
    initial_lr: float = 0.5
    final_lr: float = 0.01
    seed: int = 0
    mode: str = "online"

    def __post_init__(self):
        if self.topology not in ("strip_1d", "grid_2d"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.mode not in ("online", "batch"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.topology == "grid_2d":
            if not (isinstance(self.node_count, (tuple, list)) and len(self.node_count) == 2):
                raise ValueError("grid_2d needs node_count=(rows, cols)")
            object.__setattr__(self, "node_count", (int(self.node_count[0]), int(self.node_count[1])))
            if min(self.node_count) < 1:
                raise ValueError(f"grid dimensions must be >= 1, got {self.node_count}")
        elif not isinstance(self.node_count, int):
            raise ValueError("strip_1d needs an integer node_count")
        # A 1x1 grid is a legal (if degenerate) spectrum; a strip needs at
        # least 2 nodes for its ordering to mean anything.
        if self.topology == "strip_1d" and self.n_nodes < 2:
            raise ValueError(f"need at least 2 nodes, got {self.n_nodes}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        radius0 = self.resolved_initial_radius
        if not (radius0 >= self.final_radius > 0):
            raise ValueError(f"radii must satisfy initial ({radius0}) >= final ({self.final_radius}) > 0")
        if not (self.initial_lr >= self.final_lr > 0):
            raise ValueError(f"learning rates must satisfy initial >= final > 0, got {self.initial_lr}, {self.final_lr}")

    @property
    def n_nodes(self) -> int:
        if self.topology == "grid_2d":
            return self.node_count[0] * self.node_count[1]
        return self.node_count

    @property
    def longest_side(self) -> int:
        if self.topology == "grid_2d":
            return max(self.node_count)
        return self.node_count

    @property
    def resolved_initial_radius(self) -> float:
        if self.initial_radius is not None:
            return self.initial_radius
        # Half the longest side, but never below the final radius (matters
        # only for degenerate 1x1 grids).
        return max(self.longest_side / 2.0, self.final_radius)

    def grid_coords(self) -> np.ndarray:
        if self.topology == "grid_2d":
            rows, cols = self.node_count
            r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
            return np.stack([r.ravel(), c.ravel()], axis=1)
        return np.arange(self.node_count).reshape(-1, 1)

    def to_dict(self) -> dict:
        d = {
            "topology": self.topology,
            "node_count": list(self.node_count) if self.topology == "grid_2d" else self.node_count,
            "epochs": self.epochs,
            "initial_radius": self.initial_radius,
            "final_radius": self.final_radius,
            "initial_lr": self.initial_lr,
            "final_lr": self.final_lr,
            "seed": self.seed,
            "mode": self.mode,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SomConfig":
        d = dict(d)
        if d["topology"] == "grid_2d":
            d["node_count"] = tuple(d["node_count"])
        return cls(**d)


@dataclass
class SomModel:
    config: SomConfig
    codebook: np.ndarray  # [n_nodes, dim] float32
    grid_coords: np.ndarray  # [n_nodes, 1 or 2] int
    qe_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.codebook = np.ascontiguousarray(self.codebook, dtype=np.float32)
        if self.codebook.shape[0] != self.config.n_nodes:
            raise ValueError(
                f"codebook has {self.codebook.shape[0]} rows for {self.config.n_nodes} nodes"
            )

    @property
    def dim(self) -> int:
        return self.codebook.shape[1]


@dataclass
class ClusterReport:
    assignments: dict[str, int]
    histogram: list[int]
    dropped_first_cluster: bool
    dropped_node: int | None = None
    dropped_place_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if sum(self.histogram) + len(self.dropped_place_ids) != len(self.assignments):
            raise ValueError("histogram plus dropped members must account for every assignment")


def _as_matrix(vectors: Sequence[UrbanVector]) -> tuple[np.ndarray, list[str]]:
    if not vectors:
        raise ValueError("no vectors given")
    dims = {v.values.shape[0] for v in vectors}
    if len(dims) > 1:
        raise ValueError(f"inconsistent vector dimensions: {sorted(dims)}")
    return np.stack([v.values for v in vectors]).astype(np.float64), [v.place_id for v in vectors]


def _grid_sq_distances(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff).astype(np.float64)


def train_som(vectors: Sequence[UrbanVector], config: SomConfig) -> SomModel:
    """Kohonen training, deterministic for a given config.seed.

    Per step the best-matching unit is the argmin of Euclidean distance (ties
    to the lowest index) and every row moves by lr * h * (x - w) with
    h = exp(-grid_dist^2 / (2 sigma^2)). Radius and learning rate decay
    exponentially from their initial to final values across epochs.
    """
    data, _ = _as_matrix(vectors)
    n, dim = data.shape
    coords = config.grid_coords()
    grid_d2 = _grid_sq_distances(coords)

    init_rng = np.random.default_rng(config.seed)
    codebook = data[init_rng.integers(0, n, size=config.n_nodes)].copy()

    s0, sf = config.resolved_initial_radius, config.final_radius
    l0, lf = config.initial_lr, config.final_lr
    horizon = max(config.epochs - 1, 1)
    qe_history = []

    for epoch in range(config.epochs):
        t = epoch / horizon
        sigma = s0 * (sf / s0) ** t
        lr = l0 * (lf / l0) ** t
        # Quantization error is the mean BMU distance seen while presenting the
        # epoch's samples (not a fresh end-of-epoch scan): an end-state snapshot
        # in online mode depends heavily on which samples the shuffle put last
        # while the neighborhood is still wide.
        if config.mode == "online":
            order = np.random.default_rng((config.seed, epoch)).permutation(n)
            qe_sum = 0.0
            for i in order:
                x = data[i]
                diff = x[None, :] - codebook
                d2 = np.einsum("ij,ij->i", diff, diff)
                bmu = int(np.argmin(d2))
                qe_sum += math.sqrt(max(d2[bmu], 0.0))
                h = np.exp(-grid_d2[:, bmu] / (2.0 * sigma * sigma))
                codebook += (lr * h)[:, None] * diff
            qe_history.append(qe_sum / n)
        else:
            d2 = (
                np.einsum("ij,ij->i", data, data)[:, None]
                + np.einsum("ij,ij->i", codebook, codebook)[None, :]
                - 2.0 * np.einsum("ik,jk->ij", data, codebook)
            )
            bmus = np.argmin(d2, axis=1)
            best = np.maximum(d2[np.arange(n), bmus], 0.0)
            qe_history.append(float(np.mean(np.sqrt(best))))
            sums = np.zeros_like(codebook)
            np.add.at(sums, bmus, data)
            counts = np.bincount(bmus, minlength=config.n_nodes).astype(np.float64)
            h_matrix = np.exp(-grid_d2 / (2.0 * sigma * sigma))
            numer = h_matrix @ sums
            denom = h_matrix @ counts
            occupied = denom > 1e-12
            codebook[occupied] = numer[occupied] / denom[occupied, None]

    return SomModel(config, codebook.astype(np.float32), coords, qe_history)


def assign(model: SomModel, vector: np.ndarray) -> int:
    """Index of the nearest codebook row; ties go to the lowest index."""
    v = np.asarray(vector, dtype=np.float64).reshape(-1)
    if v.shape[0] != model.dim:
        raise ValueError(f"vector dim {v.shape[0]} does not match model dim {model.dim}")
    diff = model.codebook.astype(np.float64) - v[None, :]
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


def assign_all(model: SomModel, vectors: Sequence[UrbanVector]) -> dict[str, int]:
    data, ids = _as_matrix(vectors)
    cb = model.codebook.astype(np.float64)
    if data.shape[1] != cb.shape[1]:
        raise ValueError(f"vector dim {data.shape[1]} does not match model dim {cb.shape[1]}")
    d2 = (
        np.einsum("ij,ij->i", data, data)[:, None]
        + np.einsum("ij,ij->i", cb, cb)[None, :]
        - 2.0 * data @ cb.T
    )
    nodes = np.argmin(d2, axis=1)
    return {pid: int(node) for pid, node in zip(ids, nodes)}


def cluster_report(
    model: SomModel,
    vectors: Sequence[UrbanVector],
    drop_first: bool = True,
    drop_mode: str = "index0",
) -> ClusterReport:
    """Assign every vector to its node and histogram the memberships.

    With drop_first, one cluster's members are excluded from the histogram
    (and downstream exports) but retained in dropped_place_ids: node 0 under
    drop_mode="index0", or the occupied node with the lowest mean member
    vector norm under drop_mode="lowest_mass" — the cluster that gathered the
    least spatial information.
    """
    if drop_mode not in ("index0", "lowest_mass"):
        raise ValueError(f"unknown drop_mode {drop_mode!r}")
    assignments = assign_all(model, vectors)
    norms = {v.place_id: float(np.linalg.norm(v.values.astype(np.float64))) for v in vectors}
    counts = [0] * model.config.n_nodes
    for node in assignments.values():
        counts[node] += 1

    dropped_node: int | None = None
    dropped_ids: list[str] = []
    if drop_first:
        if drop_mode == "index0":
            dropped_node = 0
        else:
            occupied = [i for i, c in enumerate(counts) if c > 0]
            mean_norm = {
                i: sum(norms[pid] for pid, n_ in assignments.items() if n_ == i) / counts[i]
                for i in occupied
            }
            dropped_node = min(occupied, key=lambda i: (mean_norm[i], i))
        dropped_ids = [pid for pid, n_ in assignments.items() if n_ == dropped_node]
        counts[dropped_node] = 0
    return ClusterReport(assignments, counts, drop_first, dropped_node, dropped_ids)


def color_map(model: SomModel) -> dict[int, tuple[int, int, int]]:
    """Node index -> RGB along the fixed blue-to-red ramp (strips only)."""
    if model.config.topology != "strip_1d":
        raise ValueError("color_map is defined for strip_1d models only")
    n = model.config.n_nodes
    return {i: COLOR_RAMP[int(round(i / (n - 1) * 255))] for i in range(n)}


def color_hex(rgb: tuple[int, int, int]) -> str:
    return "#{:02x}{:02x}{:02x}".format(*rgb)


# -- files and report exports ------------------------------------------------------


def save_som(path: str | Path, model: SomModel) -> None:
    header = {"config": model.config.to_dict(), "qe_history": model.qe_history}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(SOM_MAGIC)
        fh.write(struct.pack("<HI", SOM_VERSION, len(blob)))
        fh.write(blob)
        write_tensor(fh, model.codebook)


def load_som(path: str | Path) -> SomModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SOM_MAGIC:
            raise ValueError(f"bad model magic {magic!r}")
        version, blob_len = struct.unpack("<HI", fh.read(6))
        if version != SOM_VERSION:
            raise ValueError(f"unsupported model version {version}")
        header = json.loads(fh.read(blob_len).decode())
        config = SomConfig.from_dict(header["config"])
        codebook = read_tensor(fh)
    return SomModel(config, codebook, config.grid_coords(), header.get("qe_history", []))


def write_cluster_csv(path: str | Path, model: SomModel, report: ClusterReport) -> None:
    """place_id, node_index, color_hex rows for every non-dropped member."""
    colors = color_map(model)
    dropped = set(report.dropped_place_ids)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["place_id", "node_index", "color_hex"])
        for pid, node in report.assignments.items():
            if pid not in dropped:
                writer.writerow([pid, node, color_hex(colors[node])])


def write_histogram_json(path: str | Path, report: ClusterReport) -> None:
    payload = {
        "histogram": report.histogram,
        "dropped_first_cluster": report.dropped_first_cluster,
        "dropped_node": report.dropped_node,
        "dropped_count": len(report.dropped_place_ids),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")), encoding="utf-8")
