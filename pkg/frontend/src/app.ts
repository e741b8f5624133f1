// Single-page shell: queue and status tabs over the gateway API.

import { GatewayClient } from "./api.js";
import { QueueView } from "./queue.js";
import { StatusView } from "./status.js";

export interface AppHandles {
  queue: QueueView;
  status: StatusView;
  client: GatewayClient;
}

export function mountApp(root: HTMLElement, apiBase = "", pollMs = 3000): AppHandles {
  const doc = root.ownerDocument;
  const client = new GatewayClient(apiBase);

  const header = doc.createElement("header");
  const title = doc.createElement("h1");
  title.textContent = "qshield review";
  header.appendChild(title);

  const nav = doc.createElement("nav");
  const statusSection = doc.createElement("section");
  statusSection.id = "status";
  const queueSection = doc.createElement("section");
  queueSection.id = "queue";

  const tabs: Array<[string, HTMLElement]> = [
    ["queue", queueSection],
    ["status", statusSection],
  ];
  for (const [name, section] of tabs) {
    const button = doc.createElement("button");
    button.textContent = name;
    button.className = `tab tab-${name}`;
    button.addEventListener("click", () => {
      for (const [, other] of tabs) {
        other.hidden = other !== section;
      }
    });
    nav.appendChild(button);
  }
  header.appendChild(nav);

  const status = new StatusView(statusSection, client);
  const queue = new QueueView(queueSection, client, {
    onLabeled: () => void status.refresh(),
  });

  statusSection.hidden = false; // both visible at boot; tabs narrow the view
  queueSection.hidden = false;
  root.append(header, statusSection, queueSection);

  void queue.refresh();
  status.startPolling(pollMs);
  return { queue, status, client };
}
