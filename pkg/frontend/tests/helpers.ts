import { FetchLike } from "../src/api.js";

export function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

/** A fetch that replays scripted outcomes in order, then repeats the last. */
export function scriptedFetch(
  outcomes: Array<{ status?: number; body?: unknown; fail?: string }>,
): { fetchFn: FetchLike; calls: Array<{ url: string; init?: RequestInit }> } {
  const calls: Array<{ url: string; init?: RequestInit }> = [];
  let index = 0;
  const fetchFn: FetchLike = (url, init) => {
    calls.push({ url, init });
    const outcome = outcomes[Math.min(index, outcomes.length - 1)];
    index += 1;
    if (outcome.fail) {
      return Promise.reject(new Error(outcome.fail));
    }
    return Promise.resolve(jsonResponse(outcome.status ?? 200, outcome.body ?? {}));
  };
  return { fetchFn, calls };
}

export function threat(id: string, overrides: Record<string, unknown> = {}) {
  return {
    threat_id: id,
    device: "user_0",
    app: "com.game.puzzle",
    event_seqs: [1],
    type: "POLICY_VIOLATION",
    severity: "HIGH",
    status: "MITIGATED",
    mitigation: { kind: "BLOCK" },
    detected_at_ms: 0,
    ...overrides,
  };
}
