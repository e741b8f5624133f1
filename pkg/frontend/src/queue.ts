// Pending-queue table: FIFO rows, label/discard actions with optimistic
// removal and server reconciliation on conflict.
//
// Payloads are attacker-controlled (many are literal XSS probes) and are only
// ever written through textContent, never markup.

import { ApiError, GatewayClient } from "./api.js";
import { CLASSES, type ReviewItem } from "./types.js";

export interface QueueCallbacks {
  onLabeled?: (item: ReviewItem, label: string | null) => void;
  onError?: (message: string) => void;
}

export class QueueView {
  private tbody: HTMLTableSectionElement;
  private emptyState: HTMLElement;
  private errorBanner: HTMLElement;
  private inFlight = new Set<string>();

  constructor(
    private readonly root: HTMLElement,
    private readonly api: GatewayClient,
    private readonly callbacks: QueueCallbacks = {},
  ) {
    const doc = root.ownerDocument;
    this.errorBanner = doc.createElement("div");
    this.errorBanner.className = "banner banner-error";
    this.errorBanner.hidden = true;

    const retry = doc.createElement("button");
    retry.textContent = "retry";
    retry.className = "retry";
    retry.addEventListener("click", () => void this.refresh());

    const table = doc.createElement("table");
    table.className = "queue";
    const thead = doc.createElement("thead");
    const headRow = doc.createElement("tr");
    for (const title of ["payload", "prediction", "confidence", "actions"]) {
      const th = doc.createElement("th");
      th.textContent = title;
      headRow.appendChild(th);
    }
    thead.appendChild(headRow);
    this.tbody = doc.createElement("tbody");
    table.append(thead, this.tbody);

    this.emptyState = doc.createElement("p");
    this.emptyState.className = "empty";
    this.emptyState.textContent = "no pending samples";

    this.errorBanner.appendChild(retry);
    root.append(this.errorBanner, this.emptyState, table);
  }

  async refresh(): Promise<void> {
    let page;
    try {
      page = await this.api.fetchPending(100);
    } catch (err) {
      this.showError(err instanceof ApiError ? err.message : String(err));
      return;
    }
    this.errorBanner.hidden = true;
    this.tbody.replaceChildren();
    for (const item of page.items) {
      this.tbody.appendChild(this.buildRow(item));
    }
    this.emptyState.hidden = page.items.length > 0;
  }

  private showError(message: string): void {
    const doc = this.root.ownerDocument;
    this.errorBanner.replaceChildren();
    const text = doc.createElement("span");
    text.textContent = `gateway error: ${message} `;
    const retry = doc.createElement("button");
    retry.textContent = "retry";
    retry.className = "retry";
    retry.addEventListener("click", () => void this.refresh());
    this.errorBanner.append(text, retry);
    this.errorBanner.hidden = false;
    this.callbacks.onError?.(message);
  }

  private buildRow(item: ReviewItem): HTMLTableRowElement {
    const doc = this.root.ownerDocument;
    const row = doc.createElement("tr");
    row.dataset.itemId = item.id;

    const payload = doc.createElement("td");
    payload.className = "payload";
    payload.textContent = item.text; // text node only: hostile markup stays inert
    row.appendChild(payload);

    const prediction = doc.createElement("td");
    prediction.className = "prediction";
    const name = doc.createElement("div");
    name.textContent = item.predicted_class;
    prediction.appendChild(name);
    const bars = doc.createElement("div");
    bars.className = "bars";
    item.probs.forEach((p, i) => {
      const bar = doc.createElement("div");
      bar.className = `bar bar-${CLASSES[i] ?? i}`;
      bar.style.width = `${Math.round(p * 100)}%`;
      bar.title = `${CLASSES[i] ?? i}: ${(p * 100).toFixed(1)}%`;
      bars.appendChild(bar);
    });
    prediction.appendChild(bars);
    row.appendChild(prediction);

    const confidence = doc.createElement("td");
    confidence.textContent = `${(item.confidence * 100).toFixed(1)}%`;
    row.appendChild(confidence);

    const actions = doc.createElement("td");
    actions.className = "actions";
    for (const label of CLASSES) {
      actions.appendChild(this.buildActionButton(row, item, label));
    }
    actions.appendChild(this.buildActionButton(row, item, "discard"));
    row.appendChild(actions);
    return row;
  }

  private buildActionButton(
    row: HTMLTableRowElement,
    item: ReviewItem,
    label: string,
  ): HTMLButtonElement {
    const button = this.root.ownerDocument.createElement("button");
    button.textContent = label;
    button.className = label === "discard" ? "label-btn discard" : `label-btn label-${label}`;
    button.addEventListener("click", () => void this.handleLabel(row, item, label));
    return button;
  }

  private async handleLabel(
    row: HTMLTableRowElement,
    item: ReviewItem,
    label: string,
  ): Promise<void> {
    if (this.inFlight.has(item.id)) {
      return; // a submit for this row is already on the wire
    }
    this.inFlight.add(item.id);
    for (const btn of row.querySelectorAll("button")) {
      btn.disabled = true;
    }
    const anchor = row.nextElementSibling;
    row.remove(); // optimistic: reviewers move fast, the server arbitrates
    this.updateEmptyState();
    try {
      await this.api.submitLabel(item.id, label);
      this.callbacks.onLabeled?.(item, label === "discard" ? null : label);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // someone else resolved it; reload server truth
        await this.refresh();
      } else {
        // network or server failure: restore the row and surface the error
        this.tbody.insertBefore(row, anchor instanceof HTMLTableRowElement ? anchor : null);
        for (const btn of row.querySelectorAll("button")) {
          btn.disabled = false;
        }
        this.updateEmptyState();
        this.showError(err instanceof ApiError ? err.message : String(err));
      }
    } finally {
      this.inFlight.delete(item.id);
    }
  }

  private updateEmptyState(): void {
    this.emptyState.hidden = this.tbody.children.length > 0;
  }
}
