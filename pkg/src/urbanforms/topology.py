"""Similarity-threshold graphs over SOM codebooks.

Pairwise Euclidean distances between codebook rows are rescaled by the
global maximum into similarities in [0, 1]; a graph keeps exactly the pairs
whose similarity is strictly above a threshold. Sweeping the threshold and
tracking edge count, connected components, and cycle rank exposes which
structures (rings in particular) persist across a range of thresholds.
"""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .som import ClusterReport, SomModel, color_hex, color_map

_GRAPHML_NS = "http://graphml.graphdrawing.org/xmlns"


class SweepStats(NamedTuple):
    edge_count: int
    component_count: int
    largest_component_size: int
    cycle_rank: int


@dataclass(frozen=True)
class SimilarityGraph:
    node_count: int
    node_sizes: list[int]
    node_colors: list[str]
    edges: list[tuple[int, int, float]]
    threshold: float

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")
        if len(self.node_sizes) != self.node_count or len(self.node_colors) != self.node_count:
            raise ValueError("node attribute lists must match node_count")
        seen = set()
        for i, j, sim in self.edges:
            if not 0 <= i < j < self.node_count:
                raise ValueError(f"bad edge endpoints ({i}, {j})")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge ({i}, {j})")
            if sim < self.threshold:
                raise ValueError(f"edge ({i}, {j}) below threshold")
            seen.add((i, j))


@dataclass(frozen=True)
class PersistenceSweep:
    thresholds: list[float]
    stats: list[SweepStats]

    def __post_init__(self):
        if len(self.thresholds) != len(self.stats):
            raise ValueError("one stats row per threshold required")
        counts = [s.edge_count for s in self.stats]
        if any(b > a for a, b in zip(counts, counts[1:])):
            raise ValueError("edge counts must be non-increasing along the sweep")


def normalized_similarity(codebook: np.ndarray) -> np.ndarray:
    """Pairwise sim(i,j) = 1 - d(i,j)/d_max with unit diagonal.

    The farthest pair lands exactly on 0 and identical rows on 1, so a global
    threshold in [0, 1] reads as "percent similarity".
    """
    rows = np.asarray(codebook, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise ValueError("codebook must be a matrix with at least two rows")
    sq = np.einsum("ij,ij->i", rows, rows)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * np.einsum("ik,jk->ij", rows, rows), 0.0)
    dist = np.sqrt(d2)
    d_max = float(dist.max())
    if d_max == 0.0:
        raise ValueError("degenerate codebook: all rows identical")
    sim = 1.0 - dist / d_max
    np.fill_diagonal(sim, 1.0)
    return sim


def _edge_pairs(sim: np.ndarray, threshold: float) -> np.ndarray:
    """(i, j) index pairs with i < j and sim strictly above the threshold."""
    mask = np.triu(sim > threshold, k=1)
    return np.argwhere(mask)


class _DisjointSet:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:  # path compression
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1


def _component_stats(n: int, pairs: np.ndarray) -> tuple[int, int]:
    ds = _DisjointSet(n)
    for i, j in pairs:
        ds.union(int(i), int(j))
    roots = [ds.find(i) for i in range(n)]
    counts: dict[int, int] = {}
    for r in roots:
        counts[r] = counts.get(r, 0) + 1
    return len(counts), max(counts.values())


def build_graph(model: SomModel, report: ClusterReport, threshold: float) -> SimilarityGraph:
    """Graph whose edges are exactly the codebook pairs with sim > threshold.

    Node sizes come from the report histogram and node colors from the strip
    color ramp, so the graph carries everything its exports need.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    n = model.config.n_nodes
    if len(report.histogram) != n:
        raise ValueError("report histogram does not match the model's node count")
    sim = normalized_similarity(model.codebook)
    edges = [(int(i), int(j), float(sim[i, j])) for i, j in _edge_pairs(sim, threshold)]
    ramp = color_map(model)
    colors = [color_hex(ramp[i]) for i in range(n)]
    return SimilarityGraph(n, list(report.histogram), colors, edges, float(threshold))


def sweep(model: SomModel, report: ClusterReport, thresholds: list[float]) -> PersistenceSweep:
    """Edge/component/cycle-rank statistics at each threshold, ascending.

    Cycle rank is edges - nodes + components, the number of independent
    cycles; a value that stays pinned at 1 across a band of thresholds is the
    signature of a single persistent ring.
    """
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    if len(report.histogram) != model.config.n_nodes:
        raise ValueError("report histogram does not match the model's node count")
    n = model.config.n_nodes
    sim = normalized_similarity(model.codebook)
    stats = []
    for t in thresholds:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {t}")
        pairs = _edge_pairs(sim, t)
        components, largest = _component_stats(n, pairs)
        cycle_rank = len(pairs) - n + components
        stats.append(SweepStats(len(pairs), components, largest, cycle_rank))
    return PersistenceSweep([float(t) for t in thresholds], stats)


# -- exports ---------------------------------------------------------------


def write_graphml(path, graph: SimilarityGraph):
    ET.register_namespace("", _GRAPHML_NS)
    root = ET.Element(f"{{{_GRAPHML_NS}}}graphml")
    for key_id, target, kind in (
        ("threshold", "graph", "double"),
        ("size", "node", "int"),
        ("color", "node", "string"),
        ("similarity", "edge", "double"),
    ):
        ET.SubElement(
            root,
            f"{{{_GRAPHML_NS}}}key",
            {"id": key_id, "for": target, "attr.name": key_id, "attr.type": kind},
        )
    g = ET.SubElement(root, f"{{{_GRAPHML_NS}}}graph", {"id": "G", "edgedefault": "undirected"})
    data = ET.SubElement(g, f"{{{_GRAPHML_NS}}}data", {"key": "threshold"})
    data.text = repr(graph.threshold)
    for i in range(graph.node_count):
        node = ET.SubElement(g, f"{{{_GRAPHML_NS}}}node", {"id": f"n{i}"})
        size = ET.SubElement(node, f"{{{_GRAPHML_NS}}}data", {"key": "size"})
        size.text = str(graph.node_sizes[i])
        color = ET.SubElement(node, f"{{{_GRAPHML_NS}}}data", {"key": "color"})
        color.text = graph.node_colors[i]
    for i, j, sim in graph.edges:
        edge = ET.SubElement(g, f"{{{_GRAPHML_NS}}}edge", {"source": f"n{i}", "target": f"n{j}"})
        value = ET.SubElement(edge, f"{{{_GRAPHML_NS}}}data", {"key": "similarity"})
        value.text = repr(sim)
    tree = ET.ElementTree(root)
    ET.indent(tree)
    tree.write(path, encoding="utf-8", xml_declaration=True)


def read_graphml(path) -> SimilarityGraph:
    root = ET.parse(path).getroot()
    if root.tag != f"{{{_GRAPHML_NS}}}graphml":
        raise ValueError(f"{path}: not a GraphML document")
    g = root.find(f"{{{_GRAPHML_NS}}}graph")
    threshold = float(g.find(f"{{{_GRAPHML_NS}}}data[@key='threshold']").text)
    sizes, colors, edges = [], [], []
    for node in g.iterfind(f"{{{_GRAPHML_NS}}}node"):
        fields = {d.get("key"): d.text for d in node.iterfind(f"{{{_GRAPHML_NS}}}data")}
        sizes.append(int(fields["size"]))
        colors.append(fields["color"])
    for edge in g.iterfind(f"{{{_GRAPHML_NS}}}edge"):
        i = int(edge.get("source")[1:])
        j = int(edge.get("target")[1:])
        sim = float(edge.find(f"{{{_GRAPHML_NS}}}data[@key='similarity']").text)
        edges.append((i, j, sim))
    return SimilarityGraph(len(sizes), sizes, colors, edges, threshold)


def write_graph_json(path, graph: SimilarityGraph):
    payload = {
        "threshold": graph.threshold,
        "node_count": graph.node_count,
        "nodes": [
            {"index": i, "size": graph.node_sizes[i], "color": graph.node_colors[i]}
            for i in range(graph.node_count)
        ],
        "edges": [[i, j, sim] for i, j, sim in graph.edges],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")


def read_graph_json(path) -> SimilarityGraph:
    payload = json.loads(Path(path).read_text())
    nodes = sorted(payload["nodes"], key=lambda d: d["index"])
    return SimilarityGraph(
        payload["node_count"],
        [d["size"] for d in nodes],
        [d["color"] for d in nodes],
        [(int(i), int(j), float(sim)) for i, j, sim in payload["edges"]],
        payload["threshold"],
    )


def write_sweep_json(path, result: PersistenceSweep):
    payload = {
        "thresholds": list(result.thresholds),
        "stats": [s._asdict() for s in result.stats],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")


def read_sweep_json(path) -> PersistenceSweep:
    payload = json.loads(Path(path).read_text())
    stats = [SweepStats(**d) for d in payload["stats"]]
    return PersistenceSweep([float(t) for t in payload["thresholds"]], stats)
