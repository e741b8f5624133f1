// Thin typed client over the gateway API. Every request the UI ever makes
// goes through here, so the endpoint surface stays auditable in one place.

import type { PendingPage, ReviewItem, StatusSummary } from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }

  get unreachable(): boolean {
    return this.status === 0;
  }
}

export class GatewayClient {
  constructor(private readonly base: string = "") {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let resp: Response;
    try {
      resp = await fetch(this.base + path, {
        method,
        headers: body === undefined ? undefined : { "Content-Type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new ApiError(0, `gateway unreachable: ${String(err)}`);
    }
    let payload: unknown = null;
    try {
      payload = await resp.json();
    } catch {
      payload = null;
    }
    if (!resp.ok) {
      const detail =
        payload && typeof payload === "object" && "error" in payload
          ? String((payload as { error: unknown }).error)
          : resp.statusText;
      throw new ApiError(resp.status, detail);
    }
    return payload as T;
  }

  fetchPending(limit = 50, cursor?: string): Promise<PendingPage> {
    const query = new URLSearchParams({ limit: String(limit) });
    if (cursor !== undefined) query.set("cursor", cursor);
    return this.request<PendingPage>("GET", `/v1/review/pending?${query.toString()}`);
  }

  submitLabel(itemId: string, label: string): Promise<ReviewItem> {
    return this.request<ReviewItem>("POST", `/v1/review/${encodeURIComponent(itemId)}/label`, {
      label,
    });
  }

  fetchStatus(): Promise<StatusSummary> {
    return this.request<StatusSummary>("GET", "/v1/admin/status");
  }

  triggerRetrain(): Promise<{ status: string }> {
    return this.request<{ status: string }>("POST", "/v1/admin/retrain");
  }
}
