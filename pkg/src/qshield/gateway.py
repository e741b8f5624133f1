"""Online re-learning gateway: classify, capture low-confidence samples,
accept human labels, retrain in the background, hot-swap atomically.

Concurrency model: any number of classify readers share one immutable
parameter snapshot (a single attribute read); publication of a new snapshot
is a single reference assignment under the state lock. Queue and labeled-DB
mutations serialize through that same lock. At most one retrain runs at a
time, in a daemon thread, and never blocks reads.

Persistence is append-only JSONL (queue.jsonl event log, labeled.jsonl) plus
the current model file; a trailing partial line after a crash is discarded
with a warning on reload.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import vocab
from .data import LabeledSample, corpus_stats
from .labels import ATTACK_CLASSES, CLASSES
from .model import ModelConfig, ModelParams, init_params, load_model, predict, save_model
from .training import TrainConfig, warm_start_retrain

logger = logging.getLogger(__name__)

MODEL_FILENAME = "model.ccnn"
QUEUE_FILENAME = "queue.jsonl"
LABELED_FILENAME = "labeled.jsonl"


class UnknownItemError(KeyError):
    """Review item id does not exist."""


class ConflictError(RuntimeError):
    """Item already resolved, or an incompatible concurrent operation."""


class RetrainInProgressError(ConflictError):
    """A retrain is already running."""


class SwapError(RuntimeError):
    """Proposed model snapshot fails the version or vocab compatibility gate."""


class NoModelError(RuntimeError):
    """Service has no active model."""


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class ServiceConfig:
    confidence_threshold: float = 0.9
    sampling_rate: float = 1.0
    retrain_trigger_count: int = 100
    block_policy: tuple[str, ...] = ATTACK_CLASSES
    host: str = "127.0.0.1"
    port: int = 8080
    data_dir: str = "qshield-data"
    max_body_bytes: int = 65536
    auto_retrain: bool = True
    retrain_epochs: int = 3
    retrain_batch_size: int = 64
    retrain_learning_rate: float = 1e-3
    retrain_seed: int = 0
    capture_seed: int = 0
    static_dir: str | None = None

    def validate(self) -> None:
        if not 0.0 < self.confidence_threshold <= 1.0:
            raise ValueError(f"confidence_threshold must be in (0, 1], got {self.confidence_threshold}")
        if not 0.0 <= self.sampling_rate <= 1.0:
            raise ValueError(f"sampling_rate must be in [0, 1], got {self.sampling_rate}")
        if self.retrain_trigger_count < 1:
            raise ValueError(f"retrain_trigger_count must be >= 1, got {self.retrain_trigger_count}")
        unknown = set(self.block_policy) - set(CLASSES)
        if unknown:
            raise ValueError(f"block_policy names unknown classes: {sorted(unknown)}")
        if self.max_body_bytes < 1:
            raise ValueError("max_body_bytes must be >= 1")

    @classmethod
    def from_dict(cls, obj: dict) -> "ServiceConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "block_policy" in obj:
            obj = dict(obj, block_policy=tuple(obj["block_policy"]))
        cfg = cls(**obj)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ServiceConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ReviewItem:
    id: str
    text: str
    predicted_class: str
    probs: list[float]
    confidence: float
    model_version: int
    status: str = "pending"  # pending -> labeled | discarded
    assigned_label: str | None = None
    created_ts: str = ""
    resolved_ts: str | None = None
    seq: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ReviewItem":
        return cls(**obj)


def read_jsonl_tolerant(path) -> list[dict]:
    """Parse a JSONL file, discarding only a trailing partial line (with a warning)."""
    records = []
    with open(path, encoding="utf-8") as fh:
        raw = fh.read()
    lines = raw.split("\n")
    nonempty = [(i, line) for i, line in enumerate(lines) if line.strip()]
    for pos, (lineno, line) in enumerate(nonempty):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            if pos == len(nonempty) - 1:
                logger.warning("%s: discarding trailing partial line %d (%s)", path, lineno + 1, exc.msg)
                break
            raise ValueError(f"{path}: corrupt record at line {lineno + 1}: {exc.msg}") from exc
    return records


class Gateway:
    """Service state: active model, review queue, labeled database, retrain."""

    def __init__(self, config: ServiceConfig, params: ModelParams | None = None, seed_corpus=None):
        config.validate()
        self.config = config
        self.data_dir = Path(config.data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._model_path = self.data_dir / MODEL_FILENAME
        self._queue_path = self.data_dir / QUEUE_FILENAME
        self._labeled_path = self.data_dir / LABELED_FILENAME

        self._lock = threading.RLock()
        self._capture_rng = np.random.default_rng(config.capture_seed)
        self._retrain_state = {"status": "idle", "reason": None}
        self._retrain_thread: threading.Thread | None = None
        self._new_label_count = 0
        self.counters = {
            "requests": 0,
            "blocks": 0,
            "truncations": 0,
            "low_confidence_captures": 0,
            "labels_submitted": 0,
            "discards": 0,
            "retrains_completed": 0,
        }

        if params is None:
            if self._model_path.exists():
                params = load_model(self._model_path)
                logger.info("loaded model v%d from %s", params.version, self._model_path)
            else:
                params = init_params(ModelConfig())
                save_model(params, self._model_path)
                logger.info("initialized fresh model v0 at %s", self._model_path)
        else:
            save_model(params, self._model_path)
        self._active: ModelParams = params

        self._labeled: list[LabeledSample] = []
        if self._labeled_path.exists():
            for obj in read_jsonl_tolerant(self._labeled_path):
                self._labeled.append(LabeledSample(**obj))
        elif seed_corpus:
            with open(self._labeled_path, "w", encoding="utf-8") as fh:
                for s in seed_corpus:
                    fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")
            self._labeled = list(seed_corpus)

        self._pending: dict[str, ReviewItem] = {}
        self._resolved: dict[str, ReviewItem] = {}
        self._next_seq = 1
        if self._queue_path.exists():
            self._replay_queue_events(read_jsonl_tolerant(self._queue_path))

    # -- persistence helpers -------------------------------------------------

    def _append_jsonl(self, path: Path, obj: dict) -> None:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _replay_queue_events(self, events: list[dict]) -> None:
        for event in events:
            kind = event.get("event")
            if kind == "capture":
                item = ReviewItem.from_dict(event["item"])
                self._pending[item.id] = item
                self._next_seq = max(self._next_seq, item.seq + 1)
            elif kind == "resolve":
                item = self._pending.pop(event["id"], None)
                if item is None:
                    continue
                item.status = event["status"]
                item.assigned_label = event.get("label")
                item.resolved_ts = event.get("ts")
                self._resolved[item.id] = item
            else:
                raise ValueError(f"unknown queue event {kind!r}")

    # -- classify path -------------------------------------------------------

    def classify(self, text: str) -> dict:
        """Classify one parameter string; may capture it for review.

        The verdict is computed against a single coherent snapshot. Capture
        never delays the response beyond the append itself.
        """
        params = self._active  # one atomic snapshot read
        if params is None:
            raise NoModelError("no active model")
        verdict = predict(params, text)
        decision = "block" if verdict.predicted_class in self.config.block_policy else "allow"
        truncated = len(vocab.normalize(text)) > params.config.max_seq_len

        with self._lock:
            self.counters["requests"] += 1
            if decision == "block":
                self.counters["blocks"] += 1
            if truncated:
                self.counters["truncations"] += 1
            if verdict.confidence < self.config.confidence_threshold:
                if self._capture_rng.random() < self.config.sampling_rate:
                    self._capture(text, verdict)
        return {
            "verdict": decision,
            "class": verdict.predicted_class,
            "probs": [float(p) for p in verdict.probs],
            "confidence": float(verdict.confidence),
            "model_version": int(verdict.model_version),
        }

    def _capture(self, text: str, verdict) -> None:
        seq = self._next_seq
        self._next_seq += 1
        item = ReviewItem(
            id=f"rv-{seq:08d}",
            text=text,
            predicted_class=verdict.predicted_class,
            probs=[float(p) for p in verdict.probs],
            confidence=float(verdict.confidence),
            model_version=int(verdict.model_version),
            created_ts=_utc_now(),
            seq=seq,
        )
        self._append_jsonl(self._queue_path, {"event": "capture", "item": item.to_dict()})
        self._pending[item.id] = item
        self.counters["low_confidence_captures"] += 1

    # -- review queue --------------------------------------------------------

    def list_pending(self, limit: int = 50, cursor: str | None = None):
        """FIFO page of pending items; cursor is the seq to resume after."""
        if limit < 1:
            raise ValueError(f"limit must be >= 1, got {limit}")
        after = 0
        if cursor is not None:
            try:
                after = int(cursor)
            except (TypeError, ValueError):
                raise ValueError(f"bad cursor {cursor!r}") from None
        with self._lock:
            items = sorted(self._pending.values(), key=lambda i: i.seq)
        items = [i for i in items if i.seq > after]
        page = items[:limit]
        next_cursor = str(page[-1].seq) if len(items) > limit else None
        return page, next_cursor

    def submit_label(self, item_id: str, label: str) -> ReviewItem:
        """Resolve a pending item: a real label appends to the labeled database."""
        if label != "discard" and label not in CLASSES:
            raise ValueError(f"label must be one of {CLASSES} or 'discard', got {label!r}")
        start_retrain = False
        with self._lock:
            item = self._pending.get(item_id)
            if item is None:
                if item_id in self._resolved:
                    raise ConflictError(f"item {item_id} already {self._resolved[item_id].status}")
                raise UnknownItemError(item_id)
            now = _utc_now()
            if label == "discard":
                item.status = "discarded"
                item.resolved_ts = now
                self._append_jsonl(
                    self._queue_path,
                    {"event": "resolve", "id": item.id, "status": "discarded", "ts": now},
                )
                self.counters["discards"] += 1
            else:
                sample = LabeledSample(
                    id=f"rev-{item.id}", text=item.text, label=label, source="review", ts=now
                )
                self._append_jsonl(self._labeled_path, sample.to_dict())
                self._labeled.append(sample)
                item.status = "labeled"
                item.assigned_label = label
                item.resolved_ts = now
                self._append_jsonl(
                    self._queue_path,
                    {"event": "resolve", "id": item.id, "status": "labeled", "label": label, "ts": now},
                )
                self.counters["labels_submitted"] += 1
                self._new_label_count += 1
                if (
                    self.config.auto_retrain
                    and self._new_label_count >= self.config.retrain_trigger_count
                    and self._retrain_state["status"] != "running"
                ):
                    start_retrain = True
            del self._pending[item_id]
            self._resolved[item_id] = item
        if start_retrain:
            try:
                self.trigger_retrain(mode="auto")
            except RetrainInProgressError:  # lost a race with a manual trigger
                pass
        return item

    # -- retrain and hot swap --------------------------------------------------

    def trigger_retrain(self, mode: str = "manual") -> dict:
        """Warm-start retrain on the full labeled database, in the background."""
        with self._lock:
            if self._retrain_state["status"] == "running":
                raise RetrainInProgressError("a retrain is already running")
            if not self._labeled:
                raise ValueError("labeled database is empty; nothing to train on")
            corpus = list(self._labeled)
            old = self._active
            self._retrain_state = {"status": "running", "reason": None, "mode": mode}
            thread = threading.Thread(
                target=self._retrain_worker, args=(old, corpus), name="qshield-retrain", daemon=True
            )
            self._retrain_thread = thread
        thread.start()
        return {"status": "started", "mode": mode}

    def _retrain_worker(self, old: ModelParams, corpus) -> None:
        try:
            # Vary the seed per lineage step so successive retrains do not
            # replay identical shuffles, while staying reproducible.
            train_config = TrainConfig(
                epochs=self.config.retrain_epochs,
                batch_size=self.config.retrain_batch_size,
                learning_rate=self.config.retrain_learning_rate,
                seed=self.config.retrain_seed + old.version,
            )
            new_params, _history = warm_start_retrain(old, corpus, train_config)
            self.swap_model(new_params)
            with self._lock:
                self._retrain_state = {"status": "idle", "reason": None}
                self._new_label_count = 0
                self.counters["retrains_completed"] += 1
            logger.info("retrain complete: now serving model v%d", new_params.version)
        except Exception as exc:
            logger.exception("retrain failed; keeping model v%d", old.version)
            with self._lock:
                self._retrain_state = {"status": "failed", "reason": str(exc)}

    def swap_model(self, new_params: ModelParams) -> None:
        """Atomically publish a new snapshot after version and vocab gates."""
        with self._lock:
            active = self._active
            if new_params.version != active.version + 1:
                raise SwapError(
                    f"version {new_params.version} is not active version {active.version} + 1"
                )
            if new_params.vocab_hash != active.vocab_hash:
                raise SwapError("vocab hash mismatch between new and active model")
            tmp = self._model_path.with_suffix(".tmp")
            save_model(new_params, tmp)
            os.replace(tmp, self._model_path)  # durable before visible
            self._active = new_params

    # -- introspection ---------------------------------------------------------

    @property
    def active_version(self) -> int:
        return self._active.version

    def status(self) -> dict:
        with self._lock:
            stats = corpus_stats(self._labeled)
            return {
                "model_version": self._active.version,
                "queue_depth": len(self._pending),
                "labeled_total": stats.total,
                "labeled_counts": stats.counts,
                "new_labels_since_retrain": self._new_label_count,
                "retrain": dict(self._retrain_state),
                "counters": dict(self.counters),
            }

    def metrics(self) -> dict:
        with self._lock:
            return {"model_version": self._active.version, **self.counters}

    def wait_for_retrain(self, timeout: float = 600.0) -> None:
        """Block until the current retrain thread finishes (tests, shutdown)."""
        thread = self._retrain_thread
        if thread is not None:
            thread.join(timeout)
