import { describe, expect, it } from "vitest";
import { HashRouter, RouteParam, routeOf } from "../src/router";

describe("routeOf", () => {
  it("strips the leading hash and guarantees a slash", () => {
    expect(routeOf("#/cluster/42")).toBe("/cluster/42");
    expect(routeOf("#spectrum")).toBe("/spectrum");
    expect(routeOf("")).toBe("/");
    expect(routeOf("#")).toBe("/");
  });

  it("keeps query strings attached", () => {
    expect(routeOf("#/place/x-01?k=3")).toBe("/place/x-01?k=3");
  });
});

describe("HashRouter", () => {
  it("matches literal segments", () => {
    const router = new HashRouter();
    let hits = 0;
    router.addRoute(["spectrum"], () => {
      hits += 1;
    });
    expect(router.dispatch("/spectrum")).toBe(true);
    expect(router.dispatch("/specturm")).toBe(false);
    expect(hits).toBe(1);
  });

  it("extracts typed parameters and the query string", () => {
    const router = new HashRouter();
    const seen: [string, string | null][] = [];
    router.addRoute(["place", RouteParam.str()], (id: string, params: URLSearchParams) => {
      seen.push([id, params.get("k")]);
    });
    router.dispatch("/place/synth-00042?k=3");
    router.dispatch("/place/other");
    expect(seen).toEqual([
      ["synth-00042", "3"],
      ["other", null],
    ]);
  });

  it("parses int parameters as numbers and rejects non-integers", () => {
    const router = new HashRouter();
    const nodes: number[] = [];
    const missed: string[] = [];
    router.addRoute(["cluster", RouteParam.int()], (node: number) => {
      nodes.push(node);
    });
    router.onMiss((route) => missed.push(route));
    router.dispatch("/cluster/42");
    router.dispatch("/cluster/abc");
    expect(nodes).toEqual([42]);
    expect(missed).toEqual(["/cluster/abc"]);
  });

  it("decodes escaped segment values", () => {
    const router = new HashRouter();
    let got = "";
    router.addRoute(["place", RouteParam.str()], (id: string) => {
      got = id;
    });
    router.dispatch("/place/a%20b");
    expect(got).toBe("a b");
  });

  it("round-trips a deep link hash into the matching view", () => {
    const router = new HashRouter();
    let got = -1;
    router.addRoute(["cluster", RouteParam.int()], (node: number) => {
      got = node;
    });
    expect(router.dispatch(routeOf("#/cluster/42"))).toBe(true);
    expect(got).toBe(42);
  });

  it("falls back to the miss handler when nothing matches", () => {
    const router = new HashRouter();
    let missedRoute = "";
    router.addRoute(["spectrum"], () => {});
    router.onMiss((route) => {
      missedRoute = route;
    });
    expect(router.dispatch("/bogus/route")).toBe(false);
    expect(missedRoute).toBe("/bogus/route");
  });
});
