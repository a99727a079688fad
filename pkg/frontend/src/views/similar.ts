import { ApiError, Neighbor, PlaceSummary, isAbortError, messageOf } from "../api";
import { el } from "../dom";
import { TileLoader } from "../lazy";
import { Nav, Page } from "../nav";

export const DEFAULT_K = 6;
const K_CHOICES = [1, 3, 6, 12, 24];

/**
 * The explore-feedback loop: a query place at the head of a column with its k
 * nearest neighbors underneath. Clicking a neighbor makes it the new head
 * (a history entry, so "back" returns to the old head); changing k is a
 * filter and rewrites the route in place.
 */
export class SimilarPage implements Page {
  readonly element: HTMLElement;
  loading: Promise<void> = Promise.resolve();

  private readonly body: HTMLElement;
  private readonly tiles = new TileLoader();
  private controller: AbortController | null = null;
  private placeId = "";
  private k = DEFAULT_K;

  constructor(private readonly nav: Nav) {
    this.body = el("div", { className: "similar-body" });
    this.element = el("section", { className: "view similar" }, [
      el("h2", { text: "Similar forms" }),
      el("p", {
        className: "hint",
        text: "The query sits at the head of the column; click any neighbor to make it the new query.",
      }),
      this.body,
    ]);
  }

  show(placeId: string, k: number): void {
    this.placeId = placeId;
    this.k = k;
    this.loading = this.load();
  }

  leave(): void {
    this.controller?.abort();
  }

  routeFor(placeId: string, k = this.k): string {
    const base = `/place/${encodeURIComponent(placeId)}`;
    return k === DEFAULT_K ? base : `${base}?k=${k}`;
  }

  private async load(): Promise<void> {
    this.controller?.abort();
    const controller = new AbortController();
    this.controller = controller;
    this.tiles.reset();
    try {
      const result = await this.nav.api.similar(this.placeId, this.k, controller.signal);
      if (controller.signal.aborted) return;

      const column = el("div", { className: "similar-column" });
      column.appendChild(this.headTile(result.query));
      for (const neighbor of result.neighbors) column.appendChild(this.neighborTile(neighbor));

      this.body.replaceChildren(
        this.kPicker(),
        el("p", {
          className: "similar-head-meta",
          text: `${result.query.name} (${result.query.place_class}) — ${result.neighbors.length} neighbors`,
        }),
        column,
      );
    } catch (err) {
      if (isAbortError(err)) return;
      if (err instanceof ApiError && err.status === 404) {
        this.body.replaceChildren(
          el("p", { className: "inline-error", text: `unknown place: ${this.placeId}` }),
        );
        return;
      }
      this.renderBanner(messageOf(err));
    }
  }

  private kPicker(): HTMLElement {
    const select = el("select");
    for (const choice of K_CHOICES) {
      const option = el("option", { text: String(choice) });
      option.value = String(choice);
      option.selected = choice === this.k;
      select.appendChild(option);
    }
    select.onchange = () => {
      const k = parseInt(select.value, 10);
      this.nav.replaceFilters(this.routeFor(this.placeId, k));
      this.show(this.placeId, k);
    };
    return el("div", { className: "k-picker" }, [el("label", { text: "neighbors:" }), select]);
  }

  private headTile(place: PlaceSummary): HTMLElement {
    const img = el("img", { className: "tile-img" });
    img.alt = place.name;
    img.src = this.nav.api.imageUrl(place.image_url); // head is always visible: load eagerly
    const tile = el("div", { className: "tile member head" }, [
      img,
      el("span", { className: "caption", text: `${place.name} — query` }),
    ]);
    tile.dataset.placeId = place.place_id;
    return tile;
  }

  private neighborTile(neighbor: Neighbor): HTMLElement {
    const img = el("img", { className: "tile-img" });
    img.alt = neighbor.name;
    img.dataset.src = this.nav.api.imageUrl(neighbor.image_url);
    this.tiles.observe(img);
    const tile = el("button", { className: "tile member" }, [
      img,
      el("span", {
        className: "caption",
        text: `${neighbor.name} · d ${neighbor.distance.toFixed(2)}`,
      }),
    ]);
    tile.dataset.placeId = neighbor.place_id;
    tile.onclick = () => this.nav.navigate(this.routeFor(neighbor.place_id));
    return tile;
  }

  private renderBanner(message: string): void {
    const retry = el("button", { text: "Retry" });
    retry.onclick = () => this.show(this.placeId, this.k);
    this.body.replaceChildren(
      el("div", { className: "banner" }, [
        el("p", { text: `Couldn't load neighbors — ${message}` }),
        retry,
      ]),
    );
  }
}
