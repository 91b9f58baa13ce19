/** Browser wiring: render into #app and translate DOM events into
 * session calls. All logic lives in session.ts; this file only binds.
 */

import { ServiceClient } from "./api.js";
import { render } from "./render.js";
import { RatingSession } from "./session.js";
import type { Metric, Score } from "./types.js";

const container = document.getElementById("app");
if (!container) {
  throw new Error("missing #app container");
}
const root: HTMLElement = container;

const session = new RatingSession(
  (baseUrl, studyId, token) => new ServiceClient(baseUrl, studyId, token),
  (state) => {
    root.innerHTML = render(state);
  },
);

root.addEventListener("click", (event) => {
  const target = event.target as HTMLElement;
  const metric = target.dataset["metric"];
  const value = target.dataset["value"];
  if (metric && value) {
    session.setScore(metric as Metric, Number(value) as Score);
    return;
  }
  if (target.id === "submit") {
    void session.submit();
  }
});

root.addEventListener("submit", (event) => {
  const form = event.target as HTMLFormElement;
  if (form.id !== "login") return;
  event.preventDefault();
  const data = new FormData(form);
  void session.login(
    String(data.get("baseUrl") ?? ""),
    String(data.get("studyId") ?? ""),
    String(data.get("token") ?? ""),
  );
});
