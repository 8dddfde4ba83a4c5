import { makeApiClient, runSession } from "./app.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");
void runSession(root, makeApiClient(window.fetch.bind(window)), window.localStorage);
