"""Mini-batch training with shuffling, CE+L2 objective, and warm-start retraining.

Each epoch shuffles the whole corpus (seeded) and partitions it into batches;
one optimizer update per batch is one step. The batch gradient is the mean
over samples so the learning rate is batch-size-insensitive. The L2 penalty
covers convolution filters and output weights only: regularizing the
embedding toward zero would erase learned character geometry.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import vocab
from .labels import label_index
from .metrics import MetricsReport, evaluate_model
from .model import ActivationCache, ConfigError, ModelParams, forward


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the step where it happened."""

    def __init__(self, step: int, value: float):
        super().__init__(f"training diverged at step {step}: loss = {value!r}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # "adam" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    l2_lambda: float | None = None  # None -> use the model config value
    seed: int = 0
    early_stop_patience: int | None = None

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.l2_lambda is not None and self.l2_lambda < 0:
            raise ConfigError(f"l2_lambda must be >= 0, got {self.l2_lambda}")


@dataclass
class TrainHistory:
    """Per-step loss decomposition plus optional per-epoch eval reports."""

    ce_loss: list[float] = field(default_factory=list)
    l2_penalty: list[float] = field(default_factory=list)
    total: list[float] = field(default_factory=list)
    epoch_reports: list[MetricsReport] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.total)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "ce_loss", "l2_penalty", "total"])
            for i, (ce, l2, tot) in enumerate(zip(self.ce_loss, self.l2_penalty, self.total)):
                writer.writerow([i, repr(ce), repr(l2), repr(tot)])


def _zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    grads = {name: np.zeros_like(tensor) for name, tensor in params.tensor_items()}
    return grads


def _accumulate_sample_grads(
    params: ModelParams,
    cache: ActivationCache,
    target: int,
    grads: dict[str, np.ndarray],
    scale: float,
) -> None:
    """Backpropagate one sample's CE gradient into the accumulators."""
    cfg = params.config
    d_logits = cache.probs.copy()
    d_logits[target] -= 1.0
    d_logits *= scale

    grads["output_weights"] += np.outer(cache.z_dropped, d_logits)
    if cfg.use_bias:
        grads["output_bias"] += d_logits

    d_z = (params.output_weights @ d_logits) * cache.dropout_mult

    d_X = np.zeros_like(cache.X)
    pos = 0
    for h in cfg.filter_heights:
        bank = params.filters[h]
        m = bank.shape[0]
        am = cache.argmax_by_height[h]
        gate = cache.pre_by_height[h][am, np.arange(m)] > 0.0
        d_at_max = d_z[pos : pos + m] * gate
        rows = am[:, None] + np.arange(h)[None, :]  # (m, h) window row indices
        grads[f"filters/h{h}"] += d_at_max[:, None, None] * cache.X[rows]
        if cfg.use_bias:
            grads["conv_bias"][pos : pos + m] += d_at_max
        np.add.at(d_X, rows, d_at_max[:, None, None] * bank)
        pos += m
    np.add.at(grads["embedding"], cache.indices, d_X)


class _SgdOptimizer:
    def __init__(self, lr: float):
        self.lr = lr

    def step_begin(self) -> None:
        pass

    def update(self, name: str, tensor: np.ndarray, grad: np.ndarray) -> None:
        tensor -= self.lr * grad


class _AdamOptimizer:
    def __init__(self, lr: float, beta1: float, beta2: float, eps: float):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step_begin(self) -> None:
        self.t += 1

    def update(self, name: str, tensor: np.ndarray, grad: np.ndarray) -> None:
        if name not in self.m:
            self.m[name] = np.zeros_like(tensor)
            self.v[name] = np.zeros_like(tensor)
        m = self.m[name]
        v = self.v[name]
        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * grad * grad
        m_hat = m / (1.0 - self.beta1**self.t)
        v_hat = v / (1.0 - self.beta2**self.t)
        tensor -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return _SgdOptimizer(config.learning_rate)
    return _AdamOptimizer(config.learning_rate, config.beta1, config.beta2, config.adam_eps)


def compute_loss_and_grads(
    params: ModelParams,
    sequences: list,
    targets: list[int],
    lam: float,
    *,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> tuple[float, float, dict[str, np.ndarray]]:
    """Mean CE plus L2 penalty over a batch, with full parameter gradients.

    Exposed for the finite-difference acceptance check, which needs the exact
    training objective as a deterministic closure.
    """
    grads = _zero_grads(params)
    batch = len(sequences)
    ce_sum = 0.0
    for seq, target in zip(sequences, targets):
        _, cache = forward(params, seq, mode=mode, rng=rng)
        probs = cache.probs
        ce_sum += float(-np.log(max(probs[target], 1e-300)))
        _accumulate_sample_grads(params, cache, target, grads, 1.0 / batch)
    penalty = 0.0
    for name, tensor in params.tensor_items():
        if name == "output_weights" or name.startswith("filters/"):
            penalty += float(np.sum(tensor * tensor))
            grads[name] += 2.0 * lam * tensor
    penalty *= lam
    return ce_sum / batch, penalty, grads


def train(
    init: ModelParams,
    corpus,
    config: TrainConfig,
    eval_corpus=None,
) -> tuple[ModelParams, TrainHistory]:
    """Train from the given parameters; returns new params with version + 1.

    Deterministic given the seed: shuffling, batching, and dropout masks all
    draw from one seeded generator in a fixed order.
    """
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    config.validate()
    params = init.copy()
    cfg = params.config
    lam = config.l2_lambda if config.l2_lambda is not None else cfg.l2_lambda

    sequences = [vocab.encode_normalized(s.text, cfg.max_seq_len) for s in corpus]
    targets = [label_index(s.label) for s in corpus]

    rng = np.random.default_rng(config.seed)
    optimizer = _make_optimizer(config)
    history = TrainHistory()
    train_mode = "train" if cfg.dropout_p > 0.0 else "eval"

    step = 0
    best_metric = -np.inf
    stall = 0
    n = len(corpus)
    for _epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            batch_seqs = [sequences[i] for i in batch_idx]
            batch_targets = [targets[i] for i in batch_idx]
            ce, penalty, grads = compute_loss_and_grads(
                params, batch_seqs, batch_targets, lam, mode=train_mode, rng=rng
            )
            total = ce + penalty
            if not np.isfinite(total):
                raise TrainingDivergedError(step, total)
            optimizer.step_begin()
            for name, tensor in params.tensor_items():
                optimizer.update(name, tensor, grads[name])
            history.ce_loss.append(ce)
            history.l2_penalty.append(penalty)
            history.total.append(total)
            step += 1
        if eval_corpus:
            report = evaluate_model(params, eval_corpus)
            history.epoch_reports.append(report)
            if config.early_stop_patience is not None:
                if report.accuracy > best_metric:
                    best_metric = report.accuracy
                    stall = 0
                else:
                    stall += 1
                    if stall >= config.early_stop_patience:
                        break

    params.version = init.version + 1
    return params, history


def warm_start_retrain(
    old: ModelParams,
    updated_corpus,
    config: TrainConfig,
    eval_corpus=None,
) -> tuple[ModelParams, TrainHistory]:
    """Retrain from a deployed model on the full updated database.

    Identical to train() initialized from the old parameters with fresh
    optimizer state; using the whole database (seed plus reviewed labels)
    rather than only the delta guards against forgetting.
    """
    return train(old, updated_corpus, config, eval_corpus=eval_corpus)
