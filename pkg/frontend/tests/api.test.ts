import { describe, expect, it } from "vitest";

import { ApiError, GradingApi } from "../src/api.js";

type Call = { url: string; init?: RequestInit };

function fakeFetch(responses: Array<{ status: number; body?: unknown }>) {
  const calls: Call[] = [];
  const fn = (async (url: RequestInfo | URL, init?: RequestInit) => {
    calls.push({ url: String(url), init });
    const next = responses.shift() ?? { status: 500, body: {} };
    return {
      ok: next.status >= 200 && next.status < 300,
      status: next.status,
      json: async () => next.body ?? {},
    } as Response;
  }) as typeof fetch;
  return { fn, calls };
}

const ITEM = {
  schema_version: 1,
  instance_id: "x1",
  question: "Q?",
  answer: "A.",
  max_grade: 5,
  model_grade: 3,
  confidence: 0.41,
  cycle_index: 1,
  status: "claimed",
};

describe("GradingApi", () => {
  it("claims the next item", async () => {
    const { fn, calls } = fakeFetch([{ status: 200, body: ITEM }]);
    const api = new GradingApi("http://svc", undefined, fn);
    const item = await api.nextItem(1, "me");
    expect(item?.instance_id).toBe("x1");
    expect(calls[0]?.url).toBe("http://svc/queue/next?cycle=1&reviewer=me");
  });

  it("maps 204 to null (empty queue)", async () => {
    const { fn } = fakeFetch([{ status: 204 }]);
    const api = new GradingApi("http://svc", undefined, fn);
    expect(await api.nextItem(1)).toBeNull();
  });

  it("posts corrections with the bearer token", async () => {
    const record = {
      instance_id: "x1", cycle_index: 1, corrected_grade: 4,
      corrector_id: "me", created_at: 0,
    };
    const { fn, calls } = fakeFetch([{ status: 201, body: record }]);
    const api = new GradingApi("http://svc", "tok", fn);
    const result = await api.submitCorrection({
      instance_id: "x1", corrected_grade: 4, corrector_id: "me",
    });
    expect(result.corrected_grade).toBe(4);
    const headers = calls[0]?.init?.headers as Record<string, string>;
    expect(headers["Authorization"]).toBe("Bearer tok");
    expect(JSON.parse(String(calls[0]?.init?.body))).toMatchObject({
      instance_id: "x1",
      corrected_grade: 4,
    });
  });

  it("raises ApiError with the server detail", async () => {
    const { fn } = fakeFetch([
      { status: 422, body: { detail: "grade 9 outside rubric 0..5" } },
    ]);
    const api = new GradingApi("http://svc", undefined, fn);
    await expect(
      api.submitCorrection({ instance_id: "x1", corrected_grade: 9, corrector_id: "me" }),
    ).rejects.toThrowError(ApiError);
  });

  it("exposes pending ids from a finalize 409", async () => {
    const { fn } = fakeFetch([
      { status: 409, body: { detail: { pending: ["a", "b"] } } },
    ]);
    const api = new GradingApi("http://svc", undefined, fn);
    try {
      await api.finalizeCycle(1);
      expect.unreachable();
    } catch (err) {
      expect(err).toBeInstanceOf(ApiError);
      expect((err as ApiError).pendingIds()).toEqual(["a", "b"]);
    }
  });

  it("fetches calibration and curve payloads verbatim", async () => {
    const calibration = {
      schema_version: 1, T_star: 0.4, ece_before: 0.2, ece_after: 0.05,
      mce: 0.1, fitted_on: "b1", bins: [],
    };
    const { fn } = fakeFetch([{ status: 200, body: calibration }]);
    const api = new GradingApi("http://svc", undefined, fn);
    expect(await api.calibration()).toEqual(calibration);
  });
});
