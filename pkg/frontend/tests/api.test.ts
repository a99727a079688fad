import { afterEach, describe, expect, it, vi } from "vitest";
import { Api, ApiError } from "../src/api";

function respond(body: unknown, status = 200): Response {
  return {
    ok: status >= 200 && status < 300,
    status,
    statusText: String(status),
    json: async () => body,
  } as unknown as Response;
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("Api", () => {
  it("requests the grid with a JSON accept header", async () => {
    const seen: { url: string; init: RequestInit | undefined }[] = [];
    vi.stubGlobal("fetch", async (url: string, init?: RequestInit) => {
      seen.push({ url, init });
      return respond({ schema_version: 1, rows: 1, cols: 1, cell_size: 64, cells: [[]] });
    });
    const grid = await new Api().grid();
    expect(grid.rows).toBe(1);
    expect(seen[0].url).toBe("/api/grid");
    expect(new Headers(seen[0].init?.headers).get("Accept")).toBe("application/json");
  });

  it("encodes query parameters for similarity lookups", async () => {
    let seenUrl = "";
    vi.stubGlobal("fetch", async (url: string) => {
      seenUrl = url;
      return respond({ schema_version: 1, query: {}, k: 6, neighbors: [] });
    });
    await new Api().similar("place with space", 6);
    expect(seenUrl).toBe("/api/similar?place_id=place%20with%20space&k=6");
  });

  it("builds cluster paging and geomap bbox query strings", async () => {
    const urls: string[] = [];
    vi.stubGlobal("fetch", async (url: string) => {
      urls.push(url);
      return respond({ schema_version: 1 });
    });
    const api = new Api();
    await api.cluster(7, 48, 96);
    await api.geomap([-10, -5, 10, 5]);
    await api.geomap(null);
    expect(urls).toEqual([
      "/api/cluster/7?limit=48&offset=96",
      "/api/geomap?bbox=-10,-5,10,5",
      "/api/geomap",
    ]);
  });

  it("prefixes every request and image URL with the configured base", async () => {
    let seenUrl = "";
    vi.stubGlobal("fetch", async (url: string) => {
      seenUrl = url;
      return respond({ schema_version: 1 });
    });
    const api = new Api("http://svc:8765");
    await api.grid();
    expect(seenUrl).toBe("http://svc:8765/api/grid");
    expect(api.imageUrl("/api/image/x-01")).toBe("http://svc:8765/api/image/x-01");
  });

  it("unwraps structured error bodies into ApiError", async () => {
    vi.stubGlobal("fetch", async () =>
      respond({ schema_version: 1, code: "unknown_place", message: "place id 'x' not in index" }, 404),
    );
    const failure = await new Api().similar("x", 6).catch((err: unknown) => err);
    expect(failure).toBeInstanceOf(ApiError);
    const apiError = failure as ApiError;
    expect(apiError.status).toBe(404);
    expect(apiError.code).toBe("unknown_place");
    expect(apiError.message).toBe("place id 'x' not in index");
  });

  it("falls back to a status-derived error for non-JSON bodies", async () => {
    vi.stubGlobal("fetch", async () => {
      return {
        ok: false,
        status: 502,
        statusText: "Bad Gateway",
        json: async () => {
          throw new Error("not json");
        },
      } as unknown as Response;
    });
    const failure = await new Api().grid().catch((err: unknown) => err);
    expect(failure).toBeInstanceOf(ApiError);
    const apiError = failure as ApiError;
    expect(apiError.code).toBe("http_502");
    expect(apiError.message).toBe("request failed with status 502");
  });
});
