import { Dashboard, pollSecondsFromQuery } from "./dashboard.js";

const root = document.getElementById("app");
if (root === null) {
  throw new Error("missing #app mount point");
}
const dashboard = new Dashboard(root, {
  pollSeconds: pollSecondsFromQuery(window.location.search),
});
void dashboard.start();
