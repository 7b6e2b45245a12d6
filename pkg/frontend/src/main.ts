/** Page bootstrap: mount the calculator on the #app element. */

import { CalculatorApp } from "./app.js";

const root = document.getElementById("app");
if (root !== null) {
  void new CalculatorApp(root).start();
}
