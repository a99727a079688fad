/**
 * Deploy-time configuration. The built bundle is static; the API location is
 * read from a config.json sitting next to index.html so the same bundle can
 * point at any service instance. Missing or malformed config falls back to
 * same-origin requests.
 */

export interface ExplorerConfig {
  api_base: string;
}

export async function loadConfig(url = "config.json"): Promise<ExplorerConfig> {
  try {
    const response = await fetch(url, { headers: { Accept: "application/json" } });
    if (!response.ok) return { api_base: "" };
    const body = (await response.json()) as { api_base?: unknown };
    const base = typeof body.api_base === "string" ? body.api_base : "";
    return { api_base: base.replace(/\/+$/, "") };
  } catch {
    return { api_base: "" };
  }
}
