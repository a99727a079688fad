import { GeoFeature, isAbortError, messageOf } from "../api";
import { el } from "../dom";
import { Nav, Page } from "../nav";
import { RAMP_END, RAMP_END_LABEL, RAMP_MID, RAMP_START, RAMP_START_LABEL } from "../ramp";

export type Bbox = [number, number, number, number]; // min_lon, min_lat, max_lon, max_lat

export const WORLD: Bbox = [-180, -85, 180, 85];
const DEBOUNCE_MS = 250;
const CANVAS_W = 960;
const CANVAS_H = 560;
const POINT_RADIUS = 3;
const CLICK_RADIUS = 8;
const DRAG_THRESHOLD = 4;

export function parseBbox(text: string | null): Bbox | null {
  if (text === null) return null;
  const parts = text.split(",").map(Number);
  if (parts.length !== 4 || parts.some((v) => !Number.isFinite(v))) return null;
  if (parts[0] > parts[2] || parts[1] > parts[3]) return null;
  return [parts[0], parts[1], parts[2], parts[3]];
}

export function formatBbox(bbox: Bbox): string {
  return bbox.map((v) => String(Math.round(v * 1e6) / 1e6)).join(",");
}

interface DrawnPoint {
  x: number;
  y: number;
  color: string;
  placeId: string;
}

/**
 * Dot map of the corpus, every point colored by its cluster exactly as the
 * API says. Dragging pans and the wheel (or buttons) zooms; either schedules
 * a debounced re-query for the new bbox. Clicking a point opens its
 * similarity panel.
 */
export class MapPage implements Page {
  readonly element: HTMLElement;
  loading: Promise<void> = Promise.resolve();

  /** What the last draw pass put on the canvas (screen coords + color). */
  lastDrawn: DrawnPoint[] = [];

  private readonly canvas: HTMLCanvasElement;
  private readonly status: HTMLElement;
  private readonly body: HTMLElement;
  private controller: AbortController | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private bbox: Bbox = [...WORLD] as Bbox;
  private features: GeoFeature[] = [];
  private drag: { x: number; y: number; bbox: Bbox; moved: boolean } | null = null;
  private ctx: CanvasRenderingContext2D | null = null;
  private ctxProbed = false;

  constructor(private readonly nav: Nav) {
    this.canvas = el("canvas", { className: "geo-canvas" });
    this.canvas.width = CANVAS_W;
    this.canvas.height = CANVAS_H;
    this.canvas.addEventListener("mousedown", (e) => this.onMouseDown(e));
    this.canvas.addEventListener("mousemove", (e) => this.onMouseMove(e));
    this.canvas.addEventListener("mouseup", (e) => this.onMouseUp(e));
    this.canvas.addEventListener("wheel", (e) => {
      e.preventDefault();
      this.zoomBy(e.deltaY < 0 ? 0.5 : 2);
    });

    const zoomIn = el("button", { text: "+", title: "zoom in" });
    zoomIn.onclick = () => this.zoomBy(0.5);
    const zoomOut = el("button", { text: "−", title: "zoom out" });
    zoomOut.onclick = () => this.zoomBy(2);
    const reset = el("button", { text: "world", title: "reset view" });
    reset.onclick = () => {
      this.bbox = [...WORLD] as Bbox;
      this.nav.replaceFilters(`/map?bbox=${formatBbox(this.bbox)}`);
      this.loading = this.load();
    };
    this.status = el("span", { className: "map-status" });

    this.body = el("div", {}, [
      el("div", { className: "map-toolbar" }, [zoomIn, zoomOut, reset, this.status]),
      this.canvas,
      legend(),
    ]);
    this.element = el("section", { className: "view map" }, [
      el("h2", { text: "Map" }),
      el("p", {
        className: "hint",
        text: "Every place colored by its spectrum cluster; drag to pan, click a dot to explore it.",
      }),
      this.body,
    ]);
  }

  show(params: URLSearchParams): void {
    this.bbox = parseBbox(params.get("bbox")) ?? ([...WORLD] as Bbox);
    this.loading = this.load();
  }

  leave(): void {
    this.controller?.abort();
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }

  private async load(): Promise<void> {
    this.controller?.abort();
    const controller = new AbortController();
    this.controller = controller;
    try {
      const doc = await this.nav.api.geomap(this.bbox, controller.signal);
      if (controller.signal.aborted) return;
      this.features = doc.features;
      this.status.textContent = `${doc.features.length} places`;
      this.draw();
    } catch (err) {
      if (isAbortError(err)) return;
      this.status.textContent = `couldn't load the map — ${messageOf(err)}`;
    }
  }

  private draw(): void {
    const [minLon, minLat, maxLon, maxLat] = this.bbox;
    const spanLon = maxLon - minLon || 1e-9;
    const spanLat = maxLat - minLat || 1e-9;
    this.lastDrawn = this.features.map((feature) => {
      const [lon, lat] = feature.geometry.coordinates;
      return {
        x: ((lon - minLon) / spanLon) * CANVAS_W,
        y: ((maxLat - lat) / spanLat) * CANVAS_H,
        color: feature.properties.color,
        placeId: feature.properties.place_id,
      };
    });
    const ctx = this.context2d();
    if (ctx === null) return; // headless test environments have no raster backend
    ctx.fillStyle = "#ffffff";
    ctx.fillRect(0, 0, CANVAS_W, CANVAS_H);
    for (const point of this.lastDrawn) {
      ctx.fillStyle = point.color;
      ctx.beginPath();
      ctx.arc(point.x, point.y, POINT_RADIUS, 0, Math.PI * 2);
      ctx.fill();
    }
  }

  private context2d(): CanvasRenderingContext2D | null {
    if (!this.ctxProbed) {
      this.ctxProbed = true;
      try {
        this.ctx = this.canvas.getContext("2d");
      } catch {
        this.ctx = null;
      }
    }
    return this.ctx;
  }

  private scheduleReload(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      this.nav.replaceFilters(`/map?bbox=${formatBbox(this.bbox)}`);
      this.loading = this.load();
    }, DEBOUNCE_MS);
  }

  private zoomBy(factor: number): void {
    const [minLon, minLat, maxLon, maxLat] = this.bbox;
    const cLon = (minLon + maxLon) / 2;
    const cLat = (minLat + maxLat) / 2;
    const halfLon = ((maxLon - minLon) / 2) * factor;
    const halfLat = ((maxLat - minLat) / 2) * factor;
    this.bbox = [cLon - halfLon, cLat - halfLat, cLon + halfLon, cLat + halfLat];
    this.draw(); // redraw the stale features at the new projection right away
    this.scheduleReload();
  }

  private canvasPoint(e: MouseEvent): { x: number; y: number } {
    const rect = this.canvas.getBoundingClientRect();
    return { x: e.clientX - rect.left, y: e.clientY - rect.top };
  }

  private onMouseDown(e: MouseEvent): void {
    const { x, y } = this.canvasPoint(e);
    this.drag = { x, y, bbox: [...this.bbox] as Bbox, moved: false };
  }

  private onMouseMove(e: MouseEvent): void {
    if (this.drag === null) return;
    const { x, y } = this.canvasPoint(e);
    const dx = x - this.drag.x;
    const dy = y - this.drag.y;
    if (Math.abs(dx) + Math.abs(dy) >= DRAG_THRESHOLD) this.drag.moved = true;
    if (!this.drag.moved) return;
    const [minLon, minLat, maxLon, maxLat] = this.drag.bbox;
    const lonPerPx = (maxLon - minLon) / CANVAS_W;
    const latPerPx = (maxLat - minLat) / CANVAS_H;
    this.bbox = [
      minLon - dx * lonPerPx,
      minLat + dy * latPerPx,
      maxLon - dx * lonPerPx,
      maxLat + dy * latPerPx,
    ];
    this.draw();
  }

  private onMouseUp(e: MouseEvent): void {
    const drag = this.drag;
    this.drag = null;
    if (drag === null) return;
    if (drag.moved) {
      this.scheduleReload();
      return;
    }
    const { x, y } = this.canvasPoint(e);
    let best: DrawnPoint | null = null;
    let bestDist = CLICK_RADIUS;
    for (const point of this.lastDrawn) {
      const dist = Math.hypot(point.x - x, point.y - y);
      if (dist <= bestDist) {
        best = point;
        bestDist = dist;
      }
    }
    if (best !== null) this.nav.navigate(`/place/${encodeURIComponent(best.placeId)}`);
  }
}

function legend(): HTMLElement {
  const bar = el("div", { className: "legend-bar" });
  bar.style.background = `linear-gradient(90deg, ${RAMP_START}, ${RAMP_MID}, ${RAMP_END})`;
  return el("div", { className: "legend" }, [
    swatch(RAMP_START, RAMP_START_LABEL),
    bar,
    swatch(RAMP_END, RAMP_END_LABEL),
  ]);
}

function swatch(color: string, label: string): HTMLElement {
  const chip = el("span", { className: "legend-swatch" });
  chip.style.backgroundColor = color;
  chip.dataset.color = color;
  return el("span", { className: "legend-entry" }, [chip, el("span", { text: label })]);
}
