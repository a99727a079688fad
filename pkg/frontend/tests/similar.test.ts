import { afterEach, describe, expect, it } from "vitest";
import type { App } from "../src/app";
import { bootApp, click, shutdown } from "./helpers";
import { MockService } from "./mockapi";

let app: App | null = null;

afterEach(() => {
  if (app !== null) shutdown(app);
  app = null;
});

function headId(app: App): string | undefined {
  return app.root.querySelector<HTMLElement>(".similar-column .head")?.dataset.placeId;
}

describe("similar panel", () => {
  it("shows the query plus six neighbors by default", async () => {
    const server = new MockService();
    app = await bootApp(server, "#/place/synth-00003");
    const tiles = app.root.querySelectorAll(".similar-column .member");
    expect(tiles).toHaveLength(7); // query head + k=6
    expect(headId(app)).toBe("synth-00003");
    const call = server.callsTo("/api/similar")[0];
    expect(call.url.searchParams.get("k")).toBe("6");
  });

  it("shows distances exactly as the service reported them", async () => {
    const server = new MockService();
    app = await bootApp(server, "#/place/synth-00003");
    const captions = [...app.root.querySelectorAll(".similar-column button.member .caption")];
    expect(captions[0].textContent).toContain("d 0.50");
    expect(captions[5].textContent).toContain("d 3.00");
  });

  it("honors a k override from the deep link", async () => {
    const server = new MockService();
    app = await bootApp(server, "#/place/synth-00003?k=3");
    expect(app.root.querySelectorAll(".similar-column .member")).toHaveLength(4);
  });

  it("makes a clicked neighbor the new head and backs out again", async () => {
    const server = new MockService();
    app = await bootApp(server, "#/place/synth-00003");
    click(app.root.querySelector(".similar-column button.member"));
    await app.settle();
    expect(headId(app)).toBe("synth-00004");
    expect(window.location.hash).toBe("#/place/synth-00004");

    click(app.root.querySelector("button.back"));
    await app.settle();
    expect(headId(app)).toBe("synth-00003");
    expect(window.location.hash).toBe("#/place/synth-00003");
  });

  it("treats a k change as a filter, not a selection", async () => {
    const server = new MockService();
    app = await bootApp(server, "#/place/synth-00003");
    const depthBefore = app.session.depth;

    const select = app.root.querySelector<HTMLSelectElement>(".k-picker select");
    if (select === null) throw new Error("k picker missing");
    select.value = "12";
    select.dispatchEvent(new Event("change"));
    await app.settle();

    expect(window.location.hash).toBe("#/place/synth-00003?k=12");
    expect(app.root.querySelectorAll(".similar-column .member")).toHaveLength(13);
    expect(app.session.depth).toBe(depthBefore);
  });

  it("reports an unknown place inline without crashing", async () => {
    const server = new MockService();
    app = await bootApp(server, "#/place/nope");
    expect(app.root.querySelector(".inline-error")?.textContent).toBe("unknown place: nope");
  });
});
