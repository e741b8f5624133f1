// Wire types mirroring the gateway's HTTP/JSON API.

export const CLASSES = ["benign", "sqli", "xss", "rfi", "dt"] as const;
export type Label = (typeof CLASSES)[number];

export interface ReviewItem {
  id: string;
  text: string;
  predicted_class: string;
  probs: number[];
  confidence: number;
  model_version: number;
  status: string;
  assigned_label: string | null;
  created_ts: string;
  resolved_ts: string | null;
  seq: number;
}

export interface PendingPage {
  items: ReviewItem[];
  next_cursor: string | null;
}

export interface RetrainState {
  status: "idle" | "running" | "failed";
  reason: string | null;
  mode?: string;
}

export interface StatusSummary {
  model_version: number;
  queue_depth: number;
  labeled_total: number;
  labeled_counts: Record<string, number>;
  new_labels_since_retrain: number;
  retrain: RetrainState;
  counters: Record<string, number>;
}
