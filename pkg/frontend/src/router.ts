/**
 * Hash router: routes look like "/cluster/42" or "/place/x-01?k=3". Patterns
 * are segment lists mixing literals with typed parameters; matched parameter
 * values are passed to the handler positionally, followed by the parsed query
 * string.
 */

export interface RouteParamSpec {
  kind: "int" | "str";
}

export const RouteParam = {
  int: (): RouteParamSpec => ({ kind: "int" }),
  str: (): RouteParamSpec => ({ kind: "str" }),
};

type Segment = string | RouteParamSpec;

/* eslint-disable-next-line @typescript-eslint/no-explicit-any */
type Handler = (...args: any[]) => void;

/** "#/cluster/42" -> "/cluster/42"; missing or bare hashes normalize to "/". */
export function routeOf(hash: string): string {
  let raw = hash.startsWith("#") ? hash.slice(1) : hash;
  if (!raw.startsWith("/")) raw = "/" + raw;
  return raw;
}

export class HashRouter {
  private routes: { pattern: Segment[]; handler: Handler }[] = [];
  private missHandler: ((route: string) => void) | null = null;

  addRoute(pattern: Segment[], handler: Handler): void {
    this.routes.push({ pattern, handler });
  }

  onMiss(handler: (route: string) => void): void {
    this.missHandler = handler;
  }

  /** Match `route` against the registered patterns; true if one handled it. */
  dispatch(route: string): boolean {
    const queryAt = route.indexOf("?");
    const path = queryAt < 0 ? route : route.slice(0, queryAt);
    const params = new URLSearchParams(queryAt < 0 ? "" : route.slice(queryAt + 1));
    const parts = path
      .split("/")
      .filter((part) => part.length > 0)
      .map(decodeURIComponent);

    for (const { pattern, handler } of this.routes) {
      if (pattern.length !== parts.length) continue;
      const args: (string | number)[] = [];
      let matched = true;
      for (let i = 0; i < pattern.length; i++) {
        const spec = pattern[i];
        if (typeof spec === "string") {
          if (spec !== parts[i]) {
            matched = false;
            break;
          }
        } else if (spec.kind === "int") {
          if (!/^-?\d+$/.test(parts[i])) {
            matched = false;
            break;
          }
          args.push(parseInt(parts[i], 10));
        } else {
          args.push(parts[i]);
        }
      }
      if (!matched) continue;
      handler(...args, params);
      return true;
    }
    this.missHandler?.(route);
    return false;
  }
}
