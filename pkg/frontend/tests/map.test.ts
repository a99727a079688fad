import { afterEach, beforeAll, describe, expect, it, vi } from "vitest";
import type { App } from "../src/app";
import { WORLD } from "../src/views/map";
import { bootApp, click, shutdown } from "./helpers";
import { MockService } from "./mockapi";

let app: App | null = null;

beforeAll(() => {
  // jsdom has no raster backend; make the capability probe answer quietly
  HTMLCanvasElement.prototype.getContext = (() => null) as never;
});

afterEach(() => {
  vi.useRealTimers();
  if (app !== null) shutdown(app);
  app = null;
});

function mouse(target: Element, kind: string, x: number, y: number): void {
  target.dispatchEvent(new MouseEvent(kind, { clientX: x, clientY: y, bubbles: true }));
}

const hex = (r: number, g: number, b: number): string =>
  "#" + [r, g, b].map((v) => v.toString(16).padStart(2, "0")).join("");

describe("map view", () => {
  it("draws every point in the color the service assigned, byte for byte", async () => {
    const server = new MockService();
    app = await bootApp(server, "#/map");
    const features = server.featuresIn([...WORLD] as [number, number, number, number]) as {
      properties: { color: string; place_id: string };
    }[];
    expect(app.map.lastDrawn).toHaveLength(features.length);
    expect(app.map.lastDrawn.map((p) => p.color)).toEqual(
      features.map((f) => f.properties.color),
    );
  });

  it("labels the legend with the ramp's exact endpoint colors", async () => {
    // independent ramp table: the service's fixed anchors, blue end and red end
    const RAMP_TABLE = { start: hex(59, 76, 192), end: hex(180, 4, 38) };
    const server = new MockService();
    app = await bootApp(server, "#/map");
    const entries = [...app.root.querySelectorAll<HTMLElement>(".legend-entry")];
    expect(entries).toHaveLength(2);
    expect(entries[0].querySelector<HTMLElement>(".legend-swatch")?.dataset.color).toBe(
      RAMP_TABLE.start,
    );
    expect(entries[0].textContent).toContain("village-like");
    expect(entries[1].querySelector<HTMLElement>(".legend-swatch")?.dataset.color).toBe(
      RAMP_TABLE.end,
    );
    expect(entries[1].textContent).toContain("dense-unique");
  });

  it("renders an empty region as an empty layer, not an error", async () => {
    const server = new MockService();
    app = await bootApp(server, "#/map?bbox=0,0,1,1");
    expect(app.map.lastDrawn).toHaveLength(0);
    expect(app.root.querySelector(".map-status")?.textContent).toBe("0 places");
  });

  it("honors the bbox from a deep link", async () => {
    const server = new MockService();
    app = await bootApp(server, "#/map?bbox=-120.5,0,-118.5,50");
    const call = server.callsTo("/api/geomap")[0];
    expect(call.url.searchParams.get("bbox")).toBe("-120.5,0,-118.5,50");
    expect(app.map.lastDrawn).toHaveLength(2); // lon -120 and -119 fall inside
  });

  it("debounces the re-query while panning", async () => {
    vi.useFakeTimers();
    const server = new MockService();
    app = await bootApp(server, "#/map");
    expect(server.callsTo("/api/geomap")).toHaveLength(1);

    const canvas = app.root.querySelector("canvas");
    if (canvas === null) throw new Error("canvas missing");
    mouse(canvas, "mousedown", 100, 100);
    mouse(canvas, "mousemove", 150, 100);
    mouse(canvas, "mouseup", 150, 100);
    expect(server.callsTo("/api/geomap")).toHaveLength(1);

    vi.advanceTimersByTime(249);
    expect(server.callsTo("/api/geomap")).toHaveLength(1);
    vi.advanceTimersByTime(1);
    await app.settle();

    const calls = server.callsTo("/api/geomap");
    expect(calls).toHaveLength(2);
    expect(calls[1].url.searchParams.get("bbox")).toBe("-198.75,-85,161.25,85");
    expect(window.location.hash).toBe("#/map?bbox=-198.75,-85,161.25,85");
  });

  it("zooms around the center and re-queries the smaller bbox", async () => {
    vi.useFakeTimers();
    const server = new MockService();
    app = await bootApp(server, "#/map");
    const zoomIn = [...app.root.querySelectorAll<HTMLButtonElement>(".map-toolbar button")].find(
      (b) => b.textContent === "+",
    );
    click(zoomIn ?? null);
    vi.advanceTimersByTime(250);
    await app.settle();
    const calls = server.callsTo("/api/geomap");
    expect(calls).toHaveLength(2);
    expect(calls[1].url.searchParams.get("bbox")).toBe("-90,-42.5,90,42.5");
  });

  it("opens the similarity panel when a point is clicked", async () => {
    const server = new MockService();
    app = await bootApp(server, "#/map");
    const point = app.map.lastDrawn[0];
    const canvas = app.root.querySelector("canvas");
    if (canvas === null) throw new Error("canvas missing");
    mouse(canvas, "mousedown", point.x, point.y);
    mouse(canvas, "mouseup", point.x, point.y);
    await app.settle();
    expect(window.location.hash).toBe(`#/place/${point.placeId}`);
    expect(app.root.querySelectorAll(".similar-column .member")).toHaveLength(7);
  });

  it("keeps panning as a filter change, preserving selection history", async () => {
    vi.useFakeTimers();
    const server = new MockService();
    app = await bootApp(server, "#/map");
    const depthBefore = app.session.depth;
    const canvas = app.root.querySelector("canvas");
    if (canvas === null) throw new Error("canvas missing");
    mouse(canvas, "mousedown", 100, 100);
    mouse(canvas, "mousemove", 180, 140);
    mouse(canvas, "mouseup", 180, 140);
    vi.advanceTimersByTime(250);
    await app.settle();
    expect(app.session.depth).toBe(depthBefore);
    expect(window.location.hash.startsWith("#/map?bbox=")).toBe(true);
  });
});
