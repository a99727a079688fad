import { Api } from "./api";
import { el } from "./dom";
import { Nav, Page } from "./nav";
import { HashRouter, RouteParam, routeOf } from "./router";
import { ExplorerSession } from "./session";
import { ClusterPage } from "./views/cluster";
import { MapPage } from "./views/map";
import { SimilarPage, DEFAULT_K } from "./views/similar";
import { SpectrumPage } from "./views/spectrum";

/**
 * The explorer shell: owns the router, the selection history, and the four
 * views. All state lives in the URL hash, so any view can be restored from a
 * link alone, and the browser's back button walks the same history as the
 * shell's own back control.
 */
export class App implements Nav {
  readonly session = new ExplorerSession();
  readonly spectrum: SpectrumPage;
  readonly cluster: ClusterPage;
  readonly similar: SimilarPage;
  readonly map: MapPage;

  private readonly router = new HashRouter();
  private readonly main: HTMLElement;
  private readonly backButton: HTMLButtonElement;
  private currentPage: Page | null = null;
  private lastRoute: string | null = null;
  private readonly onHashChange = () => this.handleHashChange();

  constructor(
    readonly root: HTMLElement,
    readonly api: Api,
  ) {
    this.spectrum = new SpectrumPage(this);
    this.cluster = new ClusterPage(this);
    this.similar = new SimilarPage(this);
    this.map = new MapPage(this);

    this.backButton = el("button", { className: "back", text: "← back" });
    this.backButton.disabled = true;
    this.backButton.onclick = () => this.back();
    this.main = el("main", {});
    root.replaceChildren(
      el("div", { className: "shell" }, [
        el("header", {}, [
          el("h1", { text: "urbanforms" }),
          el("nav", {}, [this.navLink("spectrum", "/spectrum"), this.navLink("map", "/map")]),
          this.backButton,
        ]),
        this.main,
      ]),
    );
    this.registerRoutes();
  }

  start(): void {
    window.addEventListener("hashchange", this.onHashChange);
    const hash = window.location.hash;
    if (hash === "" || hash === "#" || hash === "#/") {
      this.navigate("/spectrum");
    } else {
      this.handleHashChange();
    }
  }

  stop(): void {
    window.removeEventListener("hashchange", this.onHashChange);
    this.currentPage?.leave();
  }

  navigate(route: string): void {
    const target = "#" + route;
    if (window.location.hash !== target) window.location.hash = target;
    // Dispatch immediately; the async hashchange event dedupes via lastRoute.
    this.handleHashChange();
  }

  replaceFilters(route: string): void {
    window.history.replaceState(null, "", "#" + route);
    this.lastRoute = route;
    this.session.replaceCurrent(route);
  }

  back(): void {
    const previous = this.session.previous();
    if (previous !== null) this.navigate(previous);
  }

  /** Resolves when the current view's in-flight load settles. */
  settle(): Promise<void> {
    return this.currentPage !== null ? this.currentPage.loading : Promise.resolve();
  }

  private handleHashChange(): void {
    const route = routeOf(window.location.hash);
    if (route === this.lastRoute) return;
    this.lastRoute = route;
    this.session.arrive(route);
    this.router.dispatch(route);
    this.backButton.disabled = this.session.depth === 0;
  }

  private registerRoutes(): void {
    this.router.addRoute(["spectrum"], () => {
      this.goto(this.spectrum);
      this.spectrum.show();
    });
    this.router.addRoute(["cluster", RouteParam.int()], (node: number) => {
      this.goto(this.cluster);
      this.cluster.show(node);
    });
    this.router.addRoute(["place", RouteParam.str()], (placeId: string, params: URLSearchParams) => {
      const parsed = parseInt(params.get("k") ?? "", 10);
      const k = Number.isInteger(parsed) && parsed > 0 ? parsed : DEFAULT_K;
      this.goto(this.similar);
      this.similar.show(placeId, k);
    });
    this.router.addRoute(["map"], (params: URLSearchParams) => {
      this.goto(this.map);
      this.map.show(params);
    });
    this.router.onMiss((route) => {
      this.currentPage?.leave();
      this.currentPage = null;
      const home = el("a", { text: "go to the spectrum" });
      home.href = "#/spectrum";
      home.onclick = (event) => {
        event.preventDefault();
        this.navigate("/spectrum");
      };
      this.main.replaceChildren(
        el("div", { className: "banner" }, [el("p", { text: `no such view: ${route}` }), home]),
      );
    });
  }

  private goto(page: Page): void {
    if (this.currentPage === page) return;
    this.currentPage?.leave();
    this.main.replaceChildren(page.element);
    this.currentPage = page;
  }

  private navLink(label: string, route: string): HTMLAnchorElement {
    const link = el("a", { text: label });
    link.href = "#" + route;
    link.onclick = (event) => {
      event.preventDefault();
      this.navigate(route);
    };
    return link;
  }
}
