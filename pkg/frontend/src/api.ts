/**
 * Typed client for the urbanforms read-only API. The explorer never computes
 * anything over vectors itself — every distance, cluster assignment, and
 * color in these payloads is produced by the service and displayed as-is.
 */

export interface PlaceSummary {
  place_id: string;
  name: string;
  place_class: string;
  lat: number;
  lon: number;
  image_url: string;
}

export interface Neighbor extends PlaceSummary {
  distance: number;
}

export interface SimilarPayload {
  schema_version: number;
  query: PlaceSummary;
  k: number;
  neighbors: Neighbor[];
}

export interface GridCell {
  node: number;
  representative: string | null;
  member_count: number;
}

export interface GridPayload {
  schema_version: number;
  rows: number;
  cols: number;
  cell_size: number;
  cells: GridCell[][];
}

export interface ClusterPayload {
  schema_version: number;
  node: number;
  color_hex: string;
  total: number;
  limit: number;
  offset: number;
  members: Neighbor[];
}

export interface GeoFeature {
  type: "Feature";
  geometry: { type: "Point"; coordinates: [number, number] };
  properties: { place_id: string; node: number; color: string };
}

export interface GeomapPayload {
  schema_version: number;
  type: "FeatureCollection";
  features: GeoFeature[];
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export function isAbortError(err: unknown): boolean {
  return err instanceof DOMException && err.name === "AbortError";
}

export function messageOf(err: unknown): string {
  if (err instanceof Error) return err.message;
  return String(err);
}

export class Api {
  constructor(readonly base: string = "") {}

  grid(signal?: AbortSignal): Promise<GridPayload> {
    return this.get("/api/grid", signal);
  }

  similar(placeId: string, k: number, signal?: AbortSignal): Promise<SimilarPayload> {
    return this.get(`/api/similar?place_id=${encodeURIComponent(placeId)}&k=${k}`, signal);
  }

  cluster(node: number, limit: number, offset: number, signal?: AbortSignal): Promise<ClusterPayload> {
    return this.get(`/api/cluster/${node}?limit=${limit}&offset=${offset}`, signal);
  }

  geomap(bbox: readonly number[] | null, signal?: AbortSignal): Promise<GeomapPayload> {
    const query = bbox === null ? "" : `?bbox=${bbox.join(",")}`;
    return this.get(`/api/geomap${query}`, signal);
  }

  /** Absolute URL for an image path the API handed back (e.g. "/api/image/x"). */
  imageUrl(path: string): string {
    return this.base + path;
  }

  private async get<T>(path: string, signal?: AbortSignal): Promise<T> {
    const response = await fetch(this.base + path, {
      signal,
      headers: { Accept: "application/json" },
    });
    let body: unknown = null;
    try {
      body = await response.json();
    } catch {
      body = null; // non-JSON error body; fall through to the status check
    }
    if (!response.ok) {
      const record = body as { code?: string; message?: string } | null;
      throw new ApiError(
        response.status,
        record?.code ?? `http_${response.status}`,
        record?.message ?? `request failed with status ${response.status}`,
      );
    }
    return body as T;
  }
}
