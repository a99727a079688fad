/**
 * In-memory stand-in for the urbanforms service. Payload shapes mirror the
 * real endpoints byte-for-byte in structure (schema_version, error bodies,
 * paging fields) so the views are exercised against realistic traffic, and
 * every request is recorded with its abort signal for cancellation tests.
 */

export interface PlaceFixture {
  index: number;
  place_id: string;
  name: string;
  place_class: string;
  lat: number;
  lon: number;
  node: number;
}

export interface MockOptions {
  placeCount?: number;
  gridRows?: number;
  gridCols?: number;
}

export interface RecordedCall {
  url: URL;
  signal: AbortSignal | null;
}

const PALETTE = [
  "#3b4cc0",
  "#6f91f2",
  "#aac7fd",
  "#dddcdc",
  "#f7b89c",
  "#e7755b",
  "#b40426",
  "#7f0d20",
];

const CLASSES = ["city", "town", "village"];

function jsonResponse(body: unknown, status = 200): Response {
  return {
    ok: status >= 200 && status < 300,
    status,
    statusText: String(status),
    json: async () => body,
  } as unknown as Response;
}

export class MockService {
  readonly places: PlaceFixture[] = [];
  readonly calls: RecordedCall[] = [];
  readonly gridRows: number;
  readonly gridCols: number;
  down = false;
  gridAvailable = true;

  readonly fetch: typeof fetch;

  constructor(options: MockOptions = {}) {
    const placeCount = options.placeCount ?? 24;
    this.gridRows = options.gridRows ?? 2;
    this.gridCols = options.gridCols ?? 2;
    const nodes = this.gridRows * this.gridCols;
    // The last node stays empty (when there is more than one) so blank-cell
    // handling is always exercised.
    const activeNodes = nodes > 1 ? nodes - 1 : 1;
    for (let i = 0; i < placeCount; i++) {
      this.places.push({
        index: i,
        place_id: `synth-${String(i).padStart(5, "0")}`,
        name: `place ${i}`,
        place_class: CLASSES[i % CLASSES.length],
        lat: 10 + (i % 40) * 0.5,
        lon: -120 + i,
        node: i % activeNodes,
      });
    }

    this.fetch = (async (input: RequestInfo | URL, init?: RequestInit) => {
      const raw =
        typeof input === "string" ? input : input instanceof URL ? input.href : input.url;
      const url = new URL(raw, "http://localhost");
      const signal = init?.signal ?? null;
      this.calls.push({ url, signal });
      if (this.down) throw new TypeError("fetch failed");
      await Promise.resolve(); // let an abort issued in the same tick win
      if (signal?.aborted) throw new DOMException("The operation was aborted.", "AbortError");
      return this.route(url);
    }) as typeof fetch;
  }

  callsTo(pathPrefix: string): RecordedCall[] {
    return this.calls.filter((call) => call.url.pathname.startsWith(pathPrefix));
  }

  colorOf(node: number): string {
    return PALETTE[node % PALETTE.length];
  }

  membersOf(node: number): PlaceFixture[] {
    return this.places.filter((place) => place.node === node);
  }

  featuresIn(bbox: [number, number, number, number] | null): object[] {
    return this.places
      .filter(
        (place) =>
          bbox === null ||
          (bbox[0] <= place.lon && place.lon <= bbox[2] && bbox[1] <= place.lat && place.lat <= bbox[3]),
      )
      .map((place) => ({
        type: "Feature",
        geometry: { type: "Point", coordinates: [place.lon, place.lat] },
        properties: { place_id: place.place_id, node: place.node, color: this.colorOf(place.node) },
      }));
  }

  private placeSummary(place: PlaceFixture): object {
    return {
      place_id: place.place_id,
      name: place.name,
      place_class: place.place_class,
      lat: place.lat,
      lon: place.lon,
      image_url: `/api/image/${place.place_id}`,
    };
  }

  private route(url: URL): Response {
    const path = url.pathname;

    if (path === "/api/grid") {
      if (!this.gridAvailable) {
        return jsonResponse(
          { schema_version: 1, code: "grid_unavailable", message: "no grid model in the artifact directory" },
          503,
        );
      }
      const cells = [];
      for (let r = 0; r < this.gridRows; r++) {
        const row = [];
        for (let c = 0; c < this.gridCols; c++) {
          const node = r * this.gridCols + c;
          const members = this.membersOf(node);
          row.push({
            node,
            representative: members.length > 0 ? members[0].place_id : null,
            member_count: members.length,
          });
        }
        cells.push(row);
      }
      return jsonResponse({
        schema_version: 1,
        rows: this.gridRows,
        cols: this.gridCols,
        cell_size: 64,
        cells,
      });
    }

    if (path === "/api/similar") {
      const placeId = url.searchParams.get("place_id");
      const query = this.places.find((place) => place.place_id === placeId);
      if (query === undefined) {
        return jsonResponse(
          { schema_version: 1, code: "unknown_place", message: `place id ${placeId} not in index` },
          404,
        );
      }
      const k = parseInt(url.searchParams.get("k") ?? "6", 10);
      const neighbors = [];
      for (let step = 1; step <= Math.min(k, this.places.length - 1); step++) {
        const neighbor = this.places[(query.index + step) % this.places.length];
        neighbors.push({ ...this.placeSummary(neighbor), distance: step * 0.5 });
      }
      return jsonResponse({
        schema_version: 1,
        query: this.placeSummary(query),
        k,
        neighbors,
      });
    }

    const clusterMatch = path.match(/^\/api\/cluster\/(-?\d+)$/);
    if (clusterMatch !== null) {
      const node = parseInt(clusterMatch[1], 10);
      const nodes = this.gridRows * this.gridCols;
      if (node < 0 || node >= nodes) {
        return jsonResponse(
          { schema_version: 1, code: "unknown_node", message: `node ${node} out of range [0, ${nodes - 1}]` },
          404,
        );
      }
      const limit = parseInt(url.searchParams.get("limit") ?? "50", 10);
      const offset = parseInt(url.searchParams.get("offset") ?? "0", 10);
      const members = this.membersOf(node);
      const page = members.slice(offset, offset + limit);
      return jsonResponse({
        schema_version: 1,
        node,
        color_hex: this.colorOf(node),
        total: members.length,
        limit,
        offset,
        members: page.map((place, rank) => ({
          ...this.placeSummary(place),
          distance: (offset + rank + 1) * 0.125,
        })),
      });
    }

    if (path === "/api/geomap") {
      const bboxText = url.searchParams.get("bbox");
      let bbox: [number, number, number, number] | null = null;
      if (bboxText !== null) {
        const parts = bboxText.split(",").map(Number);
        if (parts.length !== 4 || parts.some((v) => !Number.isFinite(v)) || parts[0] > parts[2] || parts[1] > parts[3]) {
          return jsonResponse(
            { schema_version: 1, code: "bad_bbox", message: "bbox must be min_lon,min_lat,max_lon,max_lat" },
            400,
          );
        }
        bbox = [parts[0], parts[1], parts[2], parts[3]];
      }
      return jsonResponse({
        schema_version: 1,
        type: "FeatureCollection",
        features: this.featuresIn(bbox),
      });
    }

    if (path.startsWith("/api/image/")) {
      return {
        ok: true,
        status: 200,
        statusText: "200",
        json: async () => {
          throw new Error("binary body");
        },
      } as unknown as Response;
    }

    return jsonResponse({ schema_version: 1, code: "not_found", message: `no route for ${path}` }, 404);
  }
}
