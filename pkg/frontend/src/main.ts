import { Api } from "./api";
import { App } from "./app";
import { loadConfig } from "./config";

window.addEventListener("load", async () => {
  const config = await loadConfig();
  const root = document.getElementById("app");
  if (root === null) throw new Error("missing #app mount point");
  new App(root, new Api(config.api_base)).start();
});
