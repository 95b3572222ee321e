import { ApiClient } from "./api.js";
import { AnnotationConsole } from "./console.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("api") ?? "http://127.0.0.1:8008";
const root = document.getElementById("app");
if (root === null) {
  throw new Error("missing #app container");
}
const console_ = new AnnotationConsole(root, new ApiClient(baseUrl), {
  pollMs: 500,
});
console_.start();
