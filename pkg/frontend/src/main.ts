/** Page bootstrap: wire the session, keyboard, and dashboard panels. */

import { GradingApi } from "./api.js";
import { apiBaseUrl } from "./config.js";
import { GradingKeyboard } from "./keyboard.js";
import { ReviewSession } from "./state.js";
import {
  renderCoverageCurve,
  renderCycleTable,
  renderReliabilityDiagram,
} from "./views/dashboard.js";
import { ReviewView } from "./views/review.js";

async function refreshDashboards(api: GradingApi, cycle: number): Promise<void> {
  const calibrationRoot = document.getElementById("calibration-panel");
  const curveRoot = document.getElementById("curve-panel");
  const historyRoot = document.getElementById("history-panel");
  if (calibrationRoot) {
    try {
      renderReliabilityDiagram(calibrationRoot, await api.calibration());
    } catch {
      calibrationRoot.textContent = "No calibration fitted yet.";
    }
  }
  if (curveRoot) {
    try {
      renderCoverageCurve(curveRoot, await api.curve(cycle));
    } catch {
      curveRoot.textContent = "No graded predictions yet.";
    }
  }
  if (historyRoot) {
    const reports = [];
    for (let j = 1; j <= cycle; j += 1) {
      try {
        reports.push(await api.metrics(j));
      } catch {
        break;
      }
    }
    renderCycleTable(historyRoot, reports);
  }
}

export function boot(): void {
  const params = new URLSearchParams(window.location.search);
  const cycle = parseInt(params.get("cycle") ?? "1", 10);
  const reviewer = params.get("reviewer") ?? "reviewer-ui";
  const api = new GradingApi(apiBaseUrl(), params.get("token") ?? undefined);
  const session = new ReviewSession(api, cycle, reviewer);

  const reviewRoot = document.getElementById("review-panel");
  if (!reviewRoot) throw new Error("missing #review-panel");
  new ReviewView(reviewRoot, session);
  new GradingKeyboard(session).attach(window);

  session.subscribe((snap) => {
    if (snap.phase === "finalized") {
      void refreshDashboards(api, cycle);
    }
  });

  void refreshDashboards(api, cycle);
  void session.loadNext();
}

if (typeof document !== "undefined" && document.getElementById("review-panel")) {
  boot();
}
