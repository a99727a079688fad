import type { Api } from "./api";

/** What a view needs from the app shell. */
export interface Nav {
  readonly api: Api;
  /** Go to a route, recording it as a selection (pushes history). */
  navigate(route: string): void;
  /** Rewrite the current route in place (filter changes: k, bbox). */
  replaceFilters(route: string): void;
}

/** A mounted view. The shell attaches/detaches `element` and awaits `loading`. */
export interface Page {
  readonly element: HTMLElement;
  loading: Promise<void>;
  /** Cancel in-flight work; called when the shell switches away. */
  leave(): void;
}
