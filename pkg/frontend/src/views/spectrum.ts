import { GridCell, GridPayload, isAbortError, messageOf } from "../api";
import { el } from "../dom";
import { TileLoader } from "../lazy";
import { Nav, Page } from "../nav";

/** Above this many cells the grid switches to windowed row rendering. */
export const VIRTUAL_THRESHOLD = 1600;
const OVERSCAN_ROWS = 4;
const MIN_TILE_PX = 36;
const MAX_TILE_PX = 160;

/**
 * The 2-d map as a zoomable image grid: one tile per node showing the node's
 * representative place, empty nodes left visibly blank. Clicking a tile opens
 * that node's cluster.
 */
export class SpectrumPage implements Page {
  readonly element: HTMLElement;
  loading: Promise<void> = Promise.resolve();

  private readonly viewport: HTMLElement;
  private readonly tiles = new TileLoader();
  private controller: AbortController | null = null;
  private grid: GridPayload | null = null;
  private sheet: HTMLElement | null = null;
  private renderedRows = new Map<number, HTMLElement>();
  private tilePx = 68;

  constructor(private readonly nav: Nav) {
    this.viewport = el("div", { className: "spectrum-viewport" });
    this.viewport.addEventListener("scroll", () => this.updateWindow());

    const zoomOut = el("button", { text: "−", title: "smaller tiles" });
    zoomOut.onclick = () => this.zoomBy(0.8);
    const zoomIn = el("button", { text: "+", title: "larger tiles" });
    zoomIn.onclick = () => this.zoomBy(1.25);

    this.element = el("section", { className: "view spectrum" }, [
      el("h2", { text: "Spectrum" }),
      el("p", {
        className: "hint",
        text: "Each tile is a cluster's representative form; click one to open the cluster.",
      }),
      el("div", { className: "spectrum-toolbar" }, [zoomOut, zoomIn]),
      this.viewport,
    ]);
  }

  show(): void {
    this.loading = this.load();
  }

  leave(): void {
    this.controller?.abort();
  }

  private async load(): Promise<void> {
    this.controller?.abort();
    const controller = new AbortController();
    this.controller = controller;
    try {
      const grid = await this.nav.api.grid(controller.signal);
      if (controller.signal.aborted) return;
      this.grid = grid;
      this.renderGrid(grid);
    } catch (err) {
      if (isAbortError(err)) return;
      this.renderBanner(messageOf(err));
    }
  }

  private zoomBy(factor: number): void {
    const next = Math.round(this.tilePx * factor);
    this.tilePx = Math.min(MAX_TILE_PX, Math.max(MIN_TILE_PX, next));
    if (this.grid !== null) this.renderGrid(this.grid);
  }

  private renderBanner(message: string): void {
    const retry = el("button", { text: "Retry" });
    retry.onclick = () => this.show();
    this.viewport.replaceChildren(
      el("div", { className: "banner" }, [
        el("p", { text: `Couldn't load the spectrum — ${message}` }),
        retry,
      ]),
    );
  }

  private renderGrid(grid: GridPayload): void {
    this.tiles.reset();
    this.renderedRows.clear();
    if (grid.rows * grid.cols <= VIRTUAL_THRESHOLD) {
      const sheet = el("div", { className: "spectrum-grid" });
      sheet.style.gridTemplateColumns = `repeat(${grid.cols}, ${this.tilePx}px)`;
      for (const row of grid.cells) {
        for (const cell of row) sheet.appendChild(this.cellTile(cell));
      }
      this.sheet = null;
      this.viewport.replaceChildren(sheet);
      return;
    }
    // Windowed mode: a fixed-height sheet with only the rows near the scroll
    // position materialized, so a 2000-node map does not mean 2000 live tiles.
    const sheet = el("div", { className: "spectrum-sheet" });
    sheet.style.position = "relative";
    sheet.style.height = `${grid.rows * this.rowPx()}px`;
    this.sheet = sheet;
    this.viewport.replaceChildren(sheet);
    this.updateWindow();
  }

  private rowPx(): number {
    return this.tilePx + 8;
  }

  private updateWindow(): void {
    if (this.grid === null || this.sheet === null) return;
    const top = this.viewport.scrollTop;
    const height = this.viewport.clientHeight || 600; // headless layouts report 0
    const first = Math.max(0, Math.floor(top / this.rowPx()) - OVERSCAN_ROWS);
    const last = Math.min(
      this.grid.rows - 1,
      Math.ceil((top + height) / this.rowPx()) + OVERSCAN_ROWS,
    );
    for (const [index, rowEl] of [...this.renderedRows]) {
      if (index < first || index > last) {
        rowEl.remove();
        this.renderedRows.delete(index);
      }
    }
    for (let r = first; r <= last; r++) {
      if (this.renderedRows.has(r)) continue;
      const rowEl = el("div", { className: "spectrum-row" });
      rowEl.style.position = "absolute";
      rowEl.style.top = `${r * this.rowPx()}px`;
      for (const cell of this.grid.cells[r]) rowEl.appendChild(this.cellTile(cell));
      this.sheet.appendChild(rowEl);
      this.renderedRows.set(r, rowEl);
    }
  }

  private cellTile(cell: GridCell): HTMLElement {
    if (cell.representative === null) {
      const blank = el("div", { className: "tile-empty" });
      blank.style.width = `${this.tilePx}px`;
      blank.style.height = `${this.tilePx}px`;
      return blank;
    }
    const img = el("img", {
      className: "tile-img",
      title: `cluster ${cell.node} — ${cell.member_count} places`,
    });
    img.alt = `representative of cluster ${cell.node}`;
    img.dataset.src = this.nav.api.imageUrl(`/api/image/${encodeURIComponent(cell.representative)}`);
    this.tiles.observe(img);
    const button = el("button", { className: "tile" }, [
      img,
      el("span", { className: "tile-count", text: String(cell.member_count) }),
    ]);
    button.style.width = `${this.tilePx}px`;
    button.style.height = `${this.tilePx}px`;
    button.dataset.node = String(cell.node);
    button.onclick = () => this.nav.navigate(`/cluster/${cell.node}`);
    return button;
  }
}
