/**
 * Keyboard-first grading: digit keys pick and submit a grade.
 *
 * Review throughput is the bottleneck, so a digit both selects and (after a
 * short multi-digit window, for rubrics beyond 9) submits. "1" then "0"
 * within the window means grade 10; Escape clears; Enter submits the current
 * selection immediately.
 */

import { ReviewSession } from "./state.js";

export interface KeyboardOptions {
  windowMs?: number;
  setTimer?: (fn: () => void, ms: number) => unknown;
  clearTimer?: (handle: unknown) => void;
}

export class GradingKeyboard {
  private buffer = "";
  private timer: unknown = null;
  private readonly windowMs: number;
  private readonly setTimer: (fn: () => void, ms: number) => unknown;
  private readonly clearTimer: (handle: unknown) => void;

  constructor(
    private readonly session: ReviewSession,
    options: KeyboardOptions = {},
  ) {
    this.windowMs = options.windowMs ?? 350;
    this.setTimer = options.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimer = options.clearTimer ?? ((handle) => clearTimeout(handle as number));
  }

  attach(target: EventTarget): () => void {
    const handler = (event: Event) => this.handle(event as KeyboardEvent);
    target.addEventListener("keydown", handler);
    return () => target.removeEventListener("keydown", handler);
  }

  handle(event: Pick<KeyboardEvent, "key">): void {
    const key = event.key;
    if (key === "Escape") {
      this.resetBuffer();
      return;
    }
    if (key === "Enter") {
      this.resetBuffer();
      void this.session.submit();
      return;
    }
    if (!/^[0-9]$/.test(key)) return;

    const snap = this.session.snapshot();
    if (snap.phase !== "reviewing" || snap.item === null) return;
    const maxGrade = snap.item.max_grade;

    const extended = this.buffer + key;
    const extendedValue = parseInt(extended, 10);
    if (this.buffer && extendedValue <= maxGrade) {
      // multi-digit grade (e.g. "10")
      this.buffer = extended;
      this.session.selectGrade(extendedValue);
    } else {
      this.buffer = key;
      if (!this.session.selectGrade(parseInt(key, 10))) {
        this.resetBuffer();
        return;
      }
    }

    const value = parseInt(this.buffer, 10);
    const couldExtend = [...this.buffer + "0"].length <= String(maxGrade).length
      && parseInt(this.buffer + "0", 10) <= maxGrade;
    if (this.timer !== null) this.clearTimer(this.timer);
    if (couldExtend) {
      // wait briefly for another digit before committing
      this.timer = this.setTimer(() => {
        this.resetBuffer();
        void this.session.submit();
      }, this.windowMs);
    } else {
      this.resetBuffer();
      void this.session.submit();
    }
    void value;
  }

  private resetBuffer(): void {
    if (this.timer !== null) this.clearTimer(this.timer);
    this.timer = null;
    this.buffer = "";
  }
}
