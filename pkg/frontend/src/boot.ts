/* Browser entry point: mounts the controller on #app and boots it. */

import { ServiceClient } from "./api.js";
import { createController, resolveApiBase } from "./main.js";

const root = document.getElementById("app");
if (root) {
  const client = new ServiceClient(resolveApiBase(window.location));
  void createController(root, client).boot();
}
