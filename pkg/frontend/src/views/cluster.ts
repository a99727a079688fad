import { ApiError, Neighbor, isAbortError, messageOf } from "../api";
import { el } from "../dom";
import { TileLoader } from "../lazy";
import { Nav, Page } from "../nav";

const PAGE_SIZE = 48;

/**
 * One node's members, nearest-to-codebook first, paged with a "show more"
 * button. Clicking a member opens its similarity panel.
 */
export class ClusterPage implements Page {
  readonly element: HTMLElement;
  loading: Promise<void> = Promise.resolve();

  private readonly body: HTMLElement;
  private readonly tiles = new TileLoader();
  private controller: AbortController | null = null;
  private node = -1;
  private shown = 0;
  private total = 0;
  private list: HTMLElement | null = null;
  private moreButton: HTMLButtonElement | null = null;

  constructor(private readonly nav: Nav) {
    this.body = el("div", { className: "cluster-body" });
    this.element = el("section", { className: "view cluster" }, [
      el("h2", { text: "Cluster" }),
      el("p", {
        className: "hint",
        text: "Members ordered by closeness to the cluster's codebook form.",
      }),
      this.body,
    ]);
  }

  show(node: number): void {
    this.node = node;
    this.loading = this.load();
  }

  leave(): void {
    this.controller?.abort();
  }

  private async load(): Promise<void> {
    this.controller?.abort();
    const controller = new AbortController();
    this.controller = controller;
    this.tiles.reset();
    try {
      const page = await this.nav.api.cluster(this.node, PAGE_SIZE, 0, controller.signal);
      if (controller.signal.aborted) return;

      const chip = el("span", { className: "color-chip" });
      chip.style.backgroundColor = page.color_hex;
      chip.dataset.color = page.color_hex;
      const head = el("div", { className: "cluster-head" }, [
        chip,
        el("strong", { text: `cluster ${page.node}` }),
        el("span", { className: "hint", text: `${page.total} places` }),
      ]);

      this.list = el("div", { className: "member-list" });
      for (const member of page.members) this.list.appendChild(this.memberTile(member));
      this.shown = page.members.length;
      this.total = page.total;

      this.body.replaceChildren(head, this.list);
      if (this.shown < this.total) {
        const more = el("button", { className: "load-more", text: "show more" });
        more.onclick = () => {
          this.loading = this.loadMore();
        };
        this.moreButton = more;
        this.body.appendChild(more);
      } else {
        this.moreButton = null;
      }
    } catch (err) {
      if (isAbortError(err)) return;
      if (err instanceof ApiError && err.status === 404) {
        this.body.replaceChildren(el("p", { className: "inline-error", text: err.message }));
        return;
      }
      this.renderBanner(messageOf(err));
    }
  }

  private async loadMore(): Promise<void> {
    if (this.list === null) return;
    const controller = new AbortController();
    this.controller = controller;
    try {
      const page = await this.nav.api.cluster(this.node, PAGE_SIZE, this.shown, controller.signal);
      if (controller.signal.aborted) return;
      for (const member of page.members) this.list.appendChild(this.memberTile(member));
      this.shown += page.members.length;
      this.total = page.total;
      if (this.shown >= this.total && this.moreButton !== null) {
        this.moreButton.remove();
        this.moreButton = null;
      }
    } catch (err) {
      if (isAbortError(err)) return;
      this.renderBanner(messageOf(err));
    }
  }

  private renderBanner(message: string): void {
    const retry = el("button", { text: "Retry" });
    retry.onclick = () => this.show(this.node);
    this.body.replaceChildren(
      el("div", { className: "banner" }, [
        el("p", { text: `Couldn't load the cluster — ${message}` }),
        retry,
      ]),
    );
  }

  private memberTile(member: Neighbor): HTMLElement {
    const img = el("img", { className: "tile-img" });
    img.alt = member.name;
    img.dataset.src = this.nav.api.imageUrl(member.image_url);
    this.tiles.observe(img);
    const tile = el("button", { className: "tile member" }, [
      img,
      el("span", {
        className: "caption",
        text: `${member.name} · d ${member.distance.toFixed(2)}`,
      }),
    ]);
    tile.dataset.placeId = member.place_id;
    tile.onclick = () => this.nav.navigate(`/place/${encodeURIComponent(member.place_id)}`);
    return tile;
  }
}
