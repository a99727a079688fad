import { vi } from "vitest";
import { Api } from "../src/api";
import { App } from "../src/app";
import { MockService } from "./mockapi";

/** Mount a fresh app against `server`, optionally at a deep link. */
export async function bootApp(server: MockService, hash = ""): Promise<App> {
  vi.stubGlobal("fetch", server.fetch);
  window.history.replaceState(null, "", "/" + hash);
  const root = document.createElement("div");
  document.body.appendChild(root);
  const app = new App(root, new Api(""));
  app.start();
  await app.settle();
  return app;
}

export function shutdown(app: App): void {
  app.stop();
  app.root.remove();
  vi.unstubAllGlobals();
}

export function click(element: Element | null): void {
  if (element === null) throw new Error("expected an element to click");
  (element as HTMLElement).click();
}
