// Status banner: model version, queue depth, per-class labeled counts,
// retrain state polling, and the manual "retrain now" control.

import { ApiError, GatewayClient } from "./api.js";
import { CLASSES, type StatusSummary } from "./types.js";

export class StatusView {
  private versionEl: HTMLElement;
  private retrainStateEl: HTMLElement;
  private queueDepthEl: HTMLElement;
  private countsEl: HTMLElement;
  private staleEl: HTMLElement;
  private failureEl: HTMLElement;
  private retrainButton: HTMLButtonElement;
  private timer: ReturnType<typeof setInterval> | null = null;
  private lastStatus: StatusSummary | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: GatewayClient,
  ) {
    const doc = root.ownerDocument;
    const banner = doc.createElement("div");
    banner.className = "status-banner";

    this.versionEl = doc.createElement("span");
    this.versionEl.className = "model-version";
    this.retrainStateEl = doc.createElement("span");
    this.retrainStateEl.className = "retrain-state";
    this.queueDepthEl = doc.createElement("span");
    this.queueDepthEl.className = "queue-depth";

    this.retrainButton = doc.createElement("button");
    this.retrainButton.className = "retrain-now";
    this.retrainButton.textContent = "retrain now";
    this.retrainButton.addEventListener("click", () => void this.retrainNow());

    banner.append(this.versionEl, this.queueDepthEl, this.retrainStateEl, this.retrainButton);

    this.staleEl = doc.createElement("div");
    this.staleEl.className = "banner banner-stale";
    this.staleEl.textContent = "gateway unreachable; showing stale data";
    this.staleEl.hidden = true;

    this.failureEl = doc.createElement("div");
    this.failureEl.className = "banner banner-failed";
    this.failureEl.hidden = true;

    this.countsEl = doc.createElement("dl");
    this.countsEl.className = "label-counts";

    root.append(banner, this.staleEl, this.failureEl, this.countsEl);
    this.render(null);
  }

  startPolling(intervalMs = 3000): void {
    this.stopPolling();
    void this.refresh();
    this.timer = setInterval(() => void this.refresh(), intervalMs);
  }

  stopPolling(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  async refresh(): Promise<void> {
    try {
      const status = await this.api.fetchStatus();
      this.lastStatus = status;
      this.staleEl.hidden = true;
      this.render(status);
    } catch {
      // keep rendering the last known data, visibly marked stale
      this.staleEl.hidden = false;
    }
  }

  private async retrainNow(): Promise<void> {
    this.retrainButton.disabled = true;
    try {
      await this.api.triggerRetrain();
    } catch (err) {
      if (!(err instanceof ApiError && err.status === 409)) {
        this.failureEl.textContent = `retrain request failed: ${
          err instanceof Error ? err.message : String(err)
        }`;
        this.failureEl.hidden = false;
      }
    }
    await this.refresh();
  }

  private render(status: StatusSummary | null): void {
    if (status === null) {
      this.versionEl.textContent = "model v?";
      this.queueDepthEl.textContent = "queue: ?";
      this.retrainStateEl.textContent = "retrain: ?";
      this.retrainButton.disabled = true;
      return;
    }
    this.versionEl.textContent = `model v${status.model_version}`;
    this.queueDepthEl.textContent = `queue: ${status.queue_depth}`;
    this.retrainStateEl.textContent = `retrain: ${status.retrain.status}`;
    this.retrainButton.disabled = status.retrain.status === "running";
    if (status.retrain.status === "failed") {
      this.failureEl.textContent = `retrain failed: ${status.retrain.reason ?? "unknown reason"}`;
      this.failureEl.hidden = false;
    } else {
      this.failureEl.hidden = true;
    }

    const doc = this.root.ownerDocument;
    this.countsEl.replaceChildren();
    for (const label of CLASSES) {
      const dt = doc.createElement("dt");
      dt.textContent = label;
      const dd = doc.createElement("dd");
      dd.dataset.label = label;
      dd.textContent = String(status.labeled_counts[label] ?? 0);
      this.countsEl.append(dt, dd);
    }
  }

  get currentStatus(): StatusSummary | null {
    return this.lastStatus;
  }
}
