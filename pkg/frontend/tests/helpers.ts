// Shared fixtures: a recording fetch stub and the documented-API shape table.

import { expect } from "vitest";
import type { ReviewItem, StatusSummary } from "../src/types.js";

export interface RecordedRequest {
  method: string;
  path: string;
  body: unknown;
}

export function jsonResponse(payload: unknown, status = 200): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export function recordingFetch(
  handler: (req: RecordedRequest) => Response | Promise<Response>,
): { fetchImpl: typeof fetch; requests: RecordedRequest[] } {
  const requests: RecordedRequest[] = [];
  const fetchImpl = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = typeof input === "string" ? input : input instanceof URL ? input.href : input.url;
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    const parsed = new URL(url, "http://gateway.test");
    const req = { method, path: parsed.pathname + parsed.search, body };
    requests.push(req);
    return handler(req);
  }) as typeof fetch;
  return { fetchImpl, requests };
}

// The gateway's documented endpoint surface; every request the UI records in
// a session must match exactly one of these shapes.
const DOCUMENTED_SHAPES: Array<{
  method: string;
  path: RegExp;
  body: (body: unknown) => boolean;
}> = [
  { method: "GET", path: /^\/v1\/review\/pending(\?.*)?$/, body: (b) => b === undefined },
  {
    method: "POST",
    path: /^\/v1\/review\/[^/]+\/label$/,
    body: (b) =>
      typeof b === "object" &&
      b !== null &&
      typeof (b as { label?: unknown }).label === "string" &&
      Object.keys(b as object).length === 1,
  },
  { method: "GET", path: /^\/v1\/admin\/status$/, body: (b) => b === undefined },
  { method: "POST", path: /^\/v1\/admin\/retrain$/, body: (b) => b === undefined },
  { method: "GET", path: /^\/v1\/metrics$/, body: (b) => b === undefined },
];

export function expectDocumentedShape(req: RecordedRequest): void {
  const match = DOCUMENTED_SHAPES.find(
    (shape) => shape.method === req.method && shape.path.test(req.path),
  );
  expect(match, `undocumented request: ${req.method} ${req.path}`).toBeDefined();
  expect(
    match!.body(req.body),
    `body shape mismatch for ${req.method} ${req.path}: ${JSON.stringify(req.body)}`,
  ).toBe(true);
}

let seq = 0;

export function makeItem(overrides: Partial<ReviewItem> = {}): ReviewItem {
  seq += 1;
  return {
    id: `rv-${String(seq).padStart(8, "0")}`,
    text: `q=${seq}`,
    predicted_class: "benign",
    probs: [0.2, 0.2, 0.2, 0.2, 0.2],
    confidence: 0.2,
    model_version: 0,
    status: "pending",
    assigned_label: null,
    created_ts: "2026-01-01T00:00:00Z",
    resolved_ts: null,
    seq,
    ...overrides,
  };
}

export function makeStatus(overrides: Partial<StatusSummary> = {}): StatusSummary {
  return {
    model_version: 0,
    queue_depth: 0,
    labeled_total: 0,
    labeled_counts: { benign: 0, sqli: 0, xss: 0, rfi: 0, dt: 0 },
    new_labels_since_retrain: 0,
    retrain: { status: "idle", reason: null },
    counters: {},
    ...overrides,
  };
}
