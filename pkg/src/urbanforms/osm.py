"""Streaming OSM XML ingest: place records and classified road geometries.

Single-pass, bounded-memory parse (elements are discarded as soon as they are
consumed; only the node coordinate table is retained for way resolution).
Plain and gzip-compressed inputs are both accepted; compression is detected
from the magic bytes, not the filename.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import json
import logging
import struct
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

log = logging.getLogger(__name__)

PLACE_CLASSES = ("city", "town", "village")
ROAD_CLASSES = ("motorway", "primary", "secondary", "tertiary", "residential", "rail", "tunnel", "other")

# highway=* values with a dedicated class; anything else carrying a highway
# or railway tag falls through to "other" / "rail".
HIGHWAY_CLASS = {
    "motorway": "motorway",
    "trunk": "motorway",
    "primary": "primary",
    "secondary": "secondary",
    "tertiary": "tertiary",
    "residential": "residential",
    "unclassified": "residential",
    "living_street": "residential",
}

ROADS_MAGIC = b"MSRD"
ROADS_VERSION = 1


class OsmParseError(ValueError):
    """Malformed OSM XML, carrying the position of the offending byte."""

    def __init__(self, message: str, line: int, column: int, byte_offset: int | None):
        where = f"line {line}, column {column}"
        if byte_offset is not None:
            where += f", byte {byte_offset}"
        super().__init__(f"{message} ({where})")
        self.line = line
        self.column = column
        self.byte_offset = byte_offset


@dataclass(frozen=True)
class PlaceRecord:
    place_id: str
    name: str
    place_class: str
    lat: float
    lon: float

    def __post_init__(self):
        if self.place_class not in PLACE_CLASSES:
            raise ValueError(f"place_class {self.place_class!r} not one of {PLACE_CLASSES}")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"lat {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"lon {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class RoadSegment:
    way_id: str
    road_class: str
    polyline: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "polyline", tuple((float(a), float(b)) for a, b in self.polyline))
        if self.road_class not in ROAD_CLASSES:
            raise ValueError(f"road_class {self.road_class!r} not one of {ROAD_CLASSES}")
        if len(self.polyline) < 2:
            raise ValueError(f"polyline of way {self.way_id} has {len(self.polyline)} vertices, need >= 2")
        for a, b in zip(self.polyline, self.polyline[1:]):
            if a == b:
                raise ValueError(f"way {self.way_id} repeats vertex {a}")


@dataclass
class CorpusManifest:
    places: list[PlaceRecord]
    source_digest: str
    extraction_timestamp: str | None = None

    def __post_init__(self):
        ids = [p.place_id for p in self.places]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate place ids in manifest: {dupes}")
        self.places = sorted(self.places, key=lambda p: p.place_id)


@dataclass
class ParseStats:
    """Side-channel counters filled in by parse_osm_xml."""

    nodes_seen: int = 0
    ways_seen: int = 0
    invalid_place_nodes: int = 0
    ways_dropped_unresolvable: int = 0
    ways_truncated: int = 0
    source_digest: str = ""


class _HashingReader(io.RawIOBase):
    """Wraps a binary stream, hashing every byte that passes through."""

    def __init__(self, raw: BinaryIO):
        self.raw = raw
        self.sha = hashlib.sha256()

    def readable(self):
        return True

    def readinto(self, b):
        chunk = self.raw.read(len(b))
        if not chunk:
            return 0
        self.sha.update(chunk)
        b[: len(chunk)] = chunk
        return len(chunk)


def _classify_way(tags: dict[str, str]) -> str | None:
    """Road class for a way's tags, or None when the way is not a road."""
    is_road = "highway" in tags or "railway" in tags
    if not is_road:
        return None
    if tags.get("tunnel") == "yes":
        return "tunnel"
    if "highway" in tags:
        return HIGHWAY_CLASS.get(tags["highway"], "other")
    return "rail"


def _longest_run(coords: list[tuple[float, float] | None]) -> list[tuple[float, float]]:
    """Longest contiguous run of resolved vertices (first wins ties)."""
    best: list[tuple[float, float]] = []
    current: list[tuple[float, float]] = []
    for c in coords + [None]:
        if c is None:
            if len(current) > len(best):
                best = current
            current = []
        else:
            current.append(c)
    return best


def _dedupe_consecutive(coords: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out = coords[:1]
    for c in coords[1:]:
        if c != out[-1]:
            out.append(c)
    return out


def _byte_offset_for(source: BinaryIO, line: int, column: int, is_gzip: bool) -> int | None:
    """Byte offset of (1-based line, 0-based column), by rescanning the source.

    For compressed inputs the offset is into the decompressed stream, matching
    the line/column the XML parser reports.
    """
    try:
        source.seek(0)
    except (AttributeError, OSError, io.UnsupportedOperation):
        return None
    fh: BinaryIO = gzip.GzipFile(fileobj=source) if is_gzip else source
    offset = 0
    for _ in range(line - 1):
        chunk = fh.readline()
        if not chunk:
            break
        offset += len(chunk)
    return offset + column


def parse_osm_xml(
    stream: BinaryIO, stats: ParseStats | None = None
) -> tuple[list[PlaceRecord], list[RoadSegment]]:
    """Stream nodes and ways out of OSM XML (optionally gzipped).

    Nodes tagged place=city/town/village become PlaceRecords; ways carrying a
    highway or railway tag become RoadSegments with the class mapped from the
    tag table (tunnel=yes wins). Ways with unresolvable node refs keep their
    longest resolvable run when it still spans >= 2 distinct vertices and are
    dropped (with a warning) otherwise. Output order follows document order.
    """
    if stats is None:
        stats = ParseStats()
    hashing = _HashingReader(stream)
    buffered = io.BufferedReader(hashing)
    is_gzip = buffered.peek(2)[:2] == b"\x1f\x8b"
    xml_stream: BinaryIO = gzip.GzipFile(fileobj=buffered) if is_gzip else buffered

    places: list[PlaceRecord] = []
    segments: list[RoadSegment] = []
    coords: dict[str, tuple[float, float]] = {}

    try:
        for _, elem in ET.iterparse(xml_stream, events=("end",)):
            if elem.tag == "node":
                stats.nodes_seen += 1
                node_id = elem.get("id", "")
                try:
                    lat, lon = float(elem.get("lat", "")), float(elem.get("lon", ""))
                except ValueError:
                    stats.invalid_place_nodes += 1
                    elem.clear()
                    continue
                coords[node_id] = (lat, lon)
                tags = {t.get("k"): t.get("v") for t in elem.iter("tag")}
                if tags.get("place") in PLACE_CLASSES:
                    try:
                        places.append(
                            PlaceRecord(node_id, tags.get("name", ""), tags["place"], lat, lon)
                        )
                    except ValueError:
                        stats.invalid_place_nodes += 1
                elem.clear()
            elif elem.tag == "way":
                stats.ways_seen += 1
                tags = {t.get("k"): t.get("v") for t in elem.iter("tag")}
                road_class = _classify_way(tags)
                if road_class is not None:
                    refs = [nd.get("ref", "") for nd in elem.iter("nd")]
                    resolved = [coords.get(r) for r in refs]
                    missing = sum(1 for c in resolved if c is None)
                    run = _dedupe_consecutive(_longest_run(resolved))
                    if len(run) >= 2:
                        segments.append(RoadSegment(elem.get("id", ""), road_class, tuple(run)))
                        if missing:
                            stats.ways_truncated += 1
                    else:
                        stats.ways_dropped_unresolvable += 1
                elem.clear()
    except ET.ParseError as exc:
        line, column = exc.position
        message = exc.msg.rsplit(":", 2)[0]
        raise OsmParseError(message, line, column, _byte_offset_for(stream, line, column, is_gzip)) from exc

    if stats.ways_dropped_unresolvable:
        log.warning("dropped %d ways with < 2 resolvable nodes", stats.ways_dropped_unresolvable)
    if stats.ways_truncated:
        log.warning("truncated %d ways with missing node refs", stats.ways_truncated)
    buffered.read()  # drain so the digest covers trailing bytes
    stats.source_digest = hashing.sha.hexdigest()
    return places, segments


def parse_osm_file(path: str | Path, stats: ParseStats | None = None):
    with open(path, "rb") as fh:
        return parse_osm_xml(fh, stats=stats)


def filter_places(places: Sequence[PlaceRecord], classes: Iterable[str]) -> list[PlaceRecord]:
    """Order-preserving subsequence of places whose class is in `classes`."""
    wanted = set(classes)
    return [p for p in places if p.place_class in wanted]


# -- manifest (line-delimited JSON) --------------------------------------------

_PLACE_KEYS = ("place_id", "name", "place_class", "lat", "lon")


def write_manifest(path: str | Path, manifest: CorpusManifest) -> None:
    """Header line with corpus-level fields, then one place per line, fixed keys."""
    lines = [
        json.dumps(
            {"source_digest": manifest.source_digest, "extraction_timestamp": manifest.extraction_timestamp},
            sort_keys=True,
            separators=(",", ":"),
        )
    ]
    for p in manifest.places:
        record = {k: getattr(p, k) for k in _PLACE_KEYS}
        lines.append(json.dumps(record, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> CorpusManifest:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        places = [PlaceRecord(**json.loads(line)) for line in fh if line.strip()]
    return CorpusManifest(places, header["source_digest"], header["extraction_timestamp"])


# -- road segment binary file ---------------------------------------------------


def write_roads(path_or_fh, segments: Iterable[RoadSegment]) -> None:
    """MSRD: magic, version u16, then per-segment way_id (u32 length + utf-8),
    road_class u8, vertex count u32, f64 (lat, lon) pairs; all little-endian."""
    own = isinstance(path_or_fh, (str, Path))
    fh = open(path_or_fh, "wb") if own else path_or_fh
    try:
        fh.write(ROADS_MAGIC)
        fh.write(struct.pack("<H", ROADS_VERSION))
        for seg in segments:
            way_bytes = seg.way_id.encode("utf-8")
            fh.write(struct.pack("<I", len(way_bytes)))
            fh.write(way_bytes)
            fh.write(struct.pack("<BI", ROAD_CLASSES.index(seg.road_class), len(seg.polyline)))
            for lat, lon in seg.polyline:
                fh.write(struct.pack("<dd", lat, lon))
    finally:
        if own:
            fh.close()


def read_roads(path_or_fh) -> list[RoadSegment]:
    own = isinstance(path_or_fh, (str, Path))
    fh = open(path_or_fh, "rb") if own else path_or_fh
    try:
        magic = fh.read(4)
        if magic != ROADS_MAGIC:
            raise ValueError(f"bad roads magic {magic!r}")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != ROADS_VERSION:
            raise ValueError(f"unsupported roads version {version}")
        segments = []
        while True:
            head = fh.read(4)
            if not head:
                break
            (id_len,) = struct.unpack("<I", head)
            way_id = fh.read(id_len).decode("utf-8")
            cls_idx, count = struct.unpack("<BI", fh.read(5))
            raw = fh.read(16 * count)
            polyline = tuple(struct.unpack_from("<dd", raw, 16 * i) for i in range(count))
            segments.append(RoadSegment(way_id, ROAD_CLASSES[cls_idx], polyline))
        return segments
    finally:
        if own:
            fh.close()
