/**
 * Typed client for the grading-service JSON API.
 *
 * The UI is a pure consumer of these payloads: every number it displays comes
 * from a field defined here, and nothing is recomputed client-side.
 */

export interface QueueItem {
  schema_version: number;
  instance_id: string;
  question: string;
  answer: string;
  max_grade: number;
  model_grade: number;
  confidence: number;
  cycle_index: number;
  status: string;
}

export interface CorrectionRecord {
  instance_id: string;
  cycle_index: number;
  corrected_grade: number;
  corrector_id: string;
  created_at: number;
}

export interface ReliabilityBin {
  lo: number;
  hi: number;
  count: number;
  mean_confidence: number;
  accuracy: number;
}

export interface CalibrationReport {
  schema_version: number;
  T_star: number;
  ece_before: number;
  ece_after: number;
  mce: number;
  fitted_on: string | null;
  bins: ReliabilityBin[];
}

export interface CurvePoint {
  tau: number;
  coverage: number;
  accepted_qwk: number | null;
  accepted_accuracy: number | null;
}

export interface CurvePayload {
  schema_version: number;
  cycle: number;
  points: CurvePoint[];
}

export interface CycleReport {
  schema_version: number;
  cycle: number;
  coverage: number;
  baseline_qwk: number | null;
  accepted_qwk: number | null;
  delta_qwk: number | null;
  rejected_qwk: number | null;
  temperature_before: number;
  temperature_after: number;
  carried: number;
  corrections_used: number;
}

export interface PendingDetail {
  pending: string[];
}

/** Error carrying the HTTP status and the server's `detail` payload. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: unknown,
  ) {
    super(`API error ${status}: ${JSON.stringify(detail)}`);
  }

  pendingIds(): string[] {
    const d = this.detail as PendingDetail | undefined;
    return d && Array.isArray(d.pending) ? d.pending : [];
  }
}

export interface CorrectionSubmission {
  instance_id: string;
  corrected_grade: number;
  corrector_id: string;
  override?: boolean;
}

export class GradingApi {
  constructor(
    private readonly baseUrl: string,
    private readonly token?: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private headers(json = false): Record<string, string> {
    const headers: Record<string, string> = {};
    if (json) headers["Content-Type"] = "application/json";
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    return headers;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T | null> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers: this.headers(body !== undefined),
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    if (response.status === 204) return null;
    const payload = await response.json().catch(() => ({}));
    if (!response.ok) {
      throw new ApiError(response.status, (payload as { detail?: unknown }).detail ?? payload);
    }
    return payload as T;
  }

  /** Claim the most uncertain pending item, or null when the queue is empty. */
  nextItem(cycle: number, reviewer?: string): Promise<QueueItem | null> {
    const query = reviewer ? `&reviewer=${encodeURIComponent(reviewer)}` : "";
    return this.request<QueueItem>("GET", `/queue/next?cycle=${cycle}${query}`);
  }

  async submitCorrection(body: CorrectionSubmission): Promise<CorrectionRecord> {
    return (await this.request<CorrectionRecord>("POST", "/corrections", body))!;
  }

  async listCorrections(cycle: number): Promise<CorrectionRecord[]> {
    const payload = await this.request<{ corrections: CorrectionRecord[] }>(
      "GET",
      `/corrections?cycle=${cycle}`,
    );
    return payload!.corrections;
  }

  async finalizeCycle(cycle: number, force = false): Promise<CycleReport> {
    const query = force ? "?force=true" : "";
    return (await this.request<CycleReport>("POST", `/cycles/${cycle}/finalize${query}`))!;
  }

  async calibration(): Promise<CalibrationReport> {
    return (await this.request<CalibrationReport>("GET", "/calibration"))!;
  }

  async curve(cycle?: number): Promise<CurvePayload> {
    const query = cycle !== undefined ? `?cycle=${cycle}` : "";
    return (await this.request<CurvePayload>("GET", `/curve${query}`))!;
  }

  async metrics(cycle: number): Promise<CycleReport> {
    return (await this.request<CycleReport>("GET", `/metrics?cycle=${cycle}`))!;
  }

  async ingestBatch(jsonl: string, idempotencyKey?: string): Promise<{ batch_id: string }> {
    const headers = this.headers();
    if (idempotencyKey) headers["Idempotency-Key"] = idempotencyKey;
    const response = await this.fetchFn(`${this.baseUrl}/batches`, {
      method: "POST",
      headers,
      body: jsonl,
    });
    const payload = await response.json();
    if (!response.ok) throw new ApiError(response.status, payload.detail ?? payload);
    return payload;
  }

  async batchStatus(batchId: string): Promise<{ batch_id: string; status: string }> {
    return (await this.request<{ batch_id: string; status: string }>(
      "GET",
      `/batches/${batchId}`,
    ))!;
  }

  async health(): Promise<boolean> {
    try {
      const response = await this.fetchFn(`${this.baseUrl}/healthz`);
      return response.ok;
    } catch {
      return false;
    }
  }
}
