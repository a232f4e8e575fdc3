/**
 * Review-session state machine.
 *
 * One session works one cycle's queue: claim the next item, pick an in-range
 * grade, submit, advance. Submissions are optimistic (the UI moves on while
 * the POST is in flight) and reconciled against the server response; a 409 or
 * 422 restores the item with an inline error so the reviewer can retry.
 */

import { ApiError, CorrectionRecord, CycleReport, GradingApi, QueueItem } from "./api.js";

export type SessionPhase =
  | "idle"
  | "loading"
  | "reviewing"
  | "empty" // queue drained: cycle ready to finalize
  | "finalized"
  | "blocked"; // finalize refused (pending items elsewhere)

export interface SessionSnapshot {
  phase: SessionPhase;
  item: QueueItem | null;
  selectedGrade: number | null;
  error: string | null;
  submitted: CorrectionRecord[];
  report: CycleReport | null;
  pendingIds: string[];
}

type Listener = (snapshot: SessionSnapshot) => void;

export class ReviewSession {
  private phase: SessionPhase = "idle";
  private item: QueueItem | null = null;
  private selectedGrade: number | null = null;
  private error: string | null = null;
  private submitted: CorrectionRecord[] = [];
  private report: CycleReport | null = null;
  private pendingIds: string[] = [];
  private listeners: Listener[] = [];

  constructor(
    private readonly api: GradingApi,
    readonly cycle: number,
    readonly correctorId: string,
  ) {}

  snapshot(): SessionSnapshot {
    return {
      phase: this.phase,
      item: this.item,
      selectedGrade: this.selectedGrade,
      error: this.error,
      submitted: [...this.submitted],
      report: this.report,
      pendingIds: [...this.pendingIds],
    };
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(): void {
    const snap = this.snapshot();
    for (const listener of this.listeners) listener(snap);
  }

  async loadNext(): Promise<void> {
    this.phase = "loading";
    this.error = null;
    this.emit();
    try {
      const item = await this.api.nextItem(this.cycle, this.correctorId);
      this.item = item;
      this.selectedGrade = null;
      this.phase = item === null ? "empty" : "reviewing";
    } catch (err) {
      this.error = describeError(err);
      this.phase = this.item ? "reviewing" : "idle";
    }
    this.emit();
  }

  /** Accept only integer grades inside the item's rubric. */
  selectGrade(grade: number): boolean {
    if (this.phase !== "reviewing" || this.item === null) return false;
    if (!Number.isInteger(grade) || grade < 0 || grade > this.item.max_grade) {
      return false;
    }
    this.selectedGrade = grade;
    this.emit();
    return true;
  }

  canSubmit(): boolean {
    return (
      this.phase === "reviewing" && this.item !== null && this.selectedGrade !== null
    );
  }

  async submit(): Promise<boolean> {
    if (!this.canSubmit() || this.item === null || this.selectedGrade === null) {
      return false;
    }
    const item = this.item;
    const grade = this.selectedGrade;
    this.phase = "loading"; // optimistic: the view advances immediately
    this.emit();
    try {
      const record = await this.api.submitCorrection({
        instance_id: item.instance_id,
        corrected_grade: grade,
        corrector_id: this.correctorId,
      });
      this.submitted.push(record);
      await this.loadNext();
      return true;
    } catch (err) {
      // reconcile: restore the item and surface the server's answer inline
      this.item = item;
      this.selectedGrade = grade;
      this.phase = "reviewing";
      this.error = describeError(err);
      this.emit();
      return false;
    }
  }

  async finalize(force = false): Promise<CycleReport | null> {
    this.phase = "loading";
    this.emit();
    try {
      this.report = await this.api.finalizeCycle(this.cycle, force);
      this.phase = "finalized";
      this.pendingIds = [];
      this.emit();
      return this.report;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.pendingIds = err.pendingIds();
        this.phase = "blocked";
      } else {
        this.phase = this.item ? "reviewing" : "empty";
      }
      this.error = describeError(err);
      this.emit();
      return null;
    }
  }
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) {
    if (err.status === 409) return `Conflict (409): ${JSON.stringify(err.detail)}`;
    if (err.status === 422) return `Rejected (422): ${JSON.stringify(err.detail)}`;
    return `Server error (${err.status})`;
  }
  return err instanceof Error ? err.message : String(err);
}
