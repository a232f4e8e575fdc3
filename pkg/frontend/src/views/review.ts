/**
 * The grading panel: one claimed item at a time.
 *
 * Shows why the item was routed here (model grade and its confidence), bounds
 * the correction input to the item's rubric, and keeps the submit button
 * disabled until a valid grade is chosen. Server rejections render inline
 * with a retry affordance; a drained queue flips to the finalize prompt.
 */

import { clear, h } from "../dom.js";
import { ReviewSession, SessionSnapshot } from "../state.js";

export class ReviewView {
  constructor(
    private readonly root: HTMLElement,
    private readonly session: ReviewSession,
  ) {
    session.subscribe((snap) => this.render(snap));
  }

  render(snap: SessionSnapshot): void {
    clear(this.root);
    if (snap.phase === "loading" || snap.phase === "idle") {
      this.root.append(h("p", { class: "status" }, ["Loading next item..."]));
      return;
    }
    if (snap.phase === "empty") {
      this.root.append(
        h("div", { class: "finalize-prompt" }, [
          h("p", {}, [
            `Queue is empty: ${snap.submitted.length} corrections submitted. `,
            "Cycle ready to finalize.",
          ]),
          h("button", { id: "finalize", class: "primary" }, ["Finalize cycle"]),
        ]),
      );
      this.wireFinalize();
      return;
    }
    if (snap.phase === "blocked") {
      const list = h("ul", { class: "pending-list" });
      for (const id of snap.pendingIds) {
        list.append(h("li", {}, [h("a", { href: `#item-${id}`, class: "pending-id" }, [id])]));
      }
      this.root.append(
        h("div", { class: "finalize-blocked" }, [
          h("p", {}, [`Cannot finalize: ${snap.pendingIds.length} items still pending.`]),
          list,
          h("button", { id: "finalize-force" }, ["Finalize anyway (carry pending)"]),
        ]),
      );
      const force = this.root.querySelector("#finalize-force");
      force?.addEventListener("click", () => void this.session.finalize(true));
      return;
    }
    if (snap.phase === "finalized" && snap.report) {
      const report = snap.report;
      this.root.append(
        h("div", { class: "report-card", id: "cycle-report" }, [
          h("h3", {}, [`Cycle ${report.cycle} finalized`]),
          reportRow("Coverage", report.coverage),
          reportRow("Baseline QWK", report.baseline_qwk),
          reportRow("Accepted QWK", report.accepted_qwk),
          reportRow("Delta", report.delta_qwk),
          reportRow("Rejected QWK", report.rejected_qwk),
          reportRow("New T*", report.temperature_after),
          h("p", { class: "carried" }, [`Carried items: ${report.carried}`]),
        ]),
      );
      return;
    }

    const item = snap.item;
    if (!item) return;
    const gradeButtons = h("div", { class: "grade-buttons", role: "group" });
    for (let g = 0; g <= item.max_grade; g += 1) {
      const selected = snap.selectedGrade === g ? " selected" : "";
      const button = h(
        "button",
        { class: `grade-button${selected}`, "data-grade": String(g) },
        [String(g)],
      );
      button.addEventListener("click", () => this.session.selectGrade(g));
      gradeButtons.append(button);
    }

    const submit = h(
      "button",
      { id: "submit-correction", class: "primary" },
      ["Submit correction"],
    ) as HTMLButtonElement;
    submit.disabled = !this.session.canSubmit();
    submit.addEventListener("click", () => void this.session.submit());

    const container = h("div", { class: "review-item", "data-instance": item.instance_id }, [
      h("p", { class: "routing-note" }, [
        `Routed for review: model graded ${item.model_grade}/${item.max_grade} `,
        `at confidence ${item.confidence.toFixed(3)} (below the gate threshold).`,
      ]),
      h("h3", {}, ["Question"]),
      h("blockquote", { class: "question" }, [item.question]),
      h("h3", {}, ["Student answer"]),
      h("blockquote", { class: "answer" }, [item.answer]),
      h("p", { class: "rubric-note" }, [
        `Grade on 0..${item.max_grade} (keyboard digits work).`,
      ]),
      gradeButtons,
      submit,
    ]);
    if (snap.error) {
      const retry = h("button", { id: "retry-submit" }, ["Retry"]);
      retry.addEventListener("click", () => void this.session.submit());
      container.append(h("div", { class: "inline-error", role: "alert" }, [snap.error, retry]));
    }
    this.root.append(container);
  }

  private wireFinalize(): void {
    const button = this.root.querySelector("#finalize");
    button?.addEventListener("click", () => void this.session.finalize(false));
  }
}

function reportRow(label: string, value: number | null): HTMLElement {
  const shown = value === null ? "--" : value.toFixed(3);
  return h("p", { class: "report-row", "data-label": label }, [`${label}: ${shown}`]);
}
