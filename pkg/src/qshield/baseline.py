"""TF-IDF control group: character n-gram vectorizer plus a linear softmax classifier.

The vectorizer follows the smoothed formulation idf(t) = ln((1+N)/(1+df(t))) + 1
with raw term counts and L2-normalized document vectors, fixed here so the
transform is reproducible bit for bit. The classifier reuses the softmax
cross-entropy and L2 machinery of the CNN stack, and both models flow through
the same evaluation path, so the comparison table is apples to apples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops, vocab
from .labels import CLASSES, label_index
from .metrics import MetricsReport, evaluate
from .model import ConfigError
from .training import TrainingDivergedError, _AdamOptimizer, _SgdOptimizer


@dataclass
class TfidfVocabulary:
    ngram_range: tuple[int, int]
    term_index: dict[str, int]  # term -> dense column, indices cover [0, len)
    idf: np.ndarray  # aligned with term_index values
    corpus_size: int


@dataclass
class SparseVector:
    indices: np.ndarray  # strictly increasing
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.indices.size)


def _ngrams(text: str, lo: int, hi: int):
    for n in range(lo, hi + 1):
        for i in range(len(text) - n + 1):
            yield text[i : i + n]


def tfidf_fit(texts, ngram_range: tuple[int, int] = (1, 3)) -> TfidfVocabulary:
    """Collect character n-gram document frequencies over a nonempty corpus."""
    lo, hi = ngram_range
    if not 1 <= lo <= hi:
        raise ValueError(f"bad ngram_range {ngram_range}")
    texts = list(texts)
    if not texts:
        raise ValueError("cannot fit TF-IDF on an empty corpus")
    df: dict[str, int] = {}
    for text in texts:
        for term in set(_ngrams(text, lo, hi)):
            df[term] = df.get(term, 0) + 1
    terms = sorted(df)
    n = len(texts)
    idf = np.array([math.log((1 + n) / (1 + df[t])) + 1.0 for t in terms])
    return TfidfVocabulary(
        ngram_range=(lo, hi),
        term_index={t: i for i, t in enumerate(terms)},
        idf=idf,
        corpus_size=n,
    )


def tfidf_transform(vocabulary: TfidfVocabulary, text: str) -> SparseVector:
    """Count n-grams, weight by idf, L2-normalize; unseen n-grams are ignored."""
    lo, hi = vocabulary.ngram_range
    counts: dict[int, int] = {}
    for term in _ngrams(text, lo, hi):
        col = vocabulary.term_index.get(term)
        if col is not None:
            counts[col] = counts.get(col, 0) + 1
    if not counts:
        return SparseVector(indices=np.empty(0, dtype=np.int64), values=np.empty(0))
    indices = np.array(sorted(counts), dtype=np.int64)
    values = np.array([counts[i] for i in indices], dtype=np.float64) * vocabulary.idf[indices]
    norm = float(np.linalg.norm(values))
    return SparseVector(indices=indices, values=values / norm)


@dataclass(frozen=True)
class BaselineConfig:
    epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    l2_lambda: float = 1e-4
    seed: int = 0
    ngram_range: tuple[int, int] = (1, 3)

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


@dataclass
class BaselineModel:
    vocabulary: TfidfVocabulary
    weights: np.ndarray  # (num_terms, num_classes)

    def logits(self, vec: SparseVector) -> np.ndarray:
        if vec.nnz == 0:
            return np.zeros(self.weights.shape[1])
        return vec.values @ self.weights[vec.indices]

    def predict_label(self, text: str) -> str:
        vec = tfidf_transform(self.vocabulary, vocab.normalize(text))
        return CLASSES[int(np.argmax(self.logits(vec)))]


def baseline_train(train_corpus, config: BaselineConfig) -> BaselineModel:
    """Fit TF-IDF on the train corpus and train the linear softmax head."""
    config.validate()
    if not train_corpus:
        raise ValueError("cannot train on an empty corpus")
    texts = [vocab.normalize(s.text) for s in train_corpus]
    targets = [label_index(s.label) for s in train_corpus]
    vocabulary = tfidf_fit(texts, config.ngram_range)
    vectors = [tfidf_transform(vocabulary, t) for t in texts]

    num_terms = len(vocabulary.term_index)
    weights = np.zeros((num_terms, len(CLASSES)))
    if config.optimizer == "sgd":
        optimizer = _SgdOptimizer(config.learning_rate)
    else:
        optimizer = _AdamOptimizer(config.learning_rate, 0.9, 0.999, 1e-8)

    rng = np.random.default_rng(config.seed)
    n = len(vectors)
    step = 0
    for _epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            grad = np.zeros_like(weights)
            ce_sum = 0.0
            for i in batch:
                vec = vectors[i]
                logits = np.zeros(len(CLASSES)) if vec.nnz == 0 else vec.values @ weights[vec.indices]
                probs, ce = ops.softmax_cross_entropy(logits, targets[i])
                ce_sum += ce
                d_logits = ops.softmax_cross_entropy_backward(probs, targets[i]) / len(batch)
                if vec.nnz:
                    grad[vec.indices] += np.outer(vec.values, d_logits)
            penalty, (l2_grad,) = ops.l2_penalty([weights], config.l2_lambda)
            grad += l2_grad
            total = ce_sum / len(batch) + penalty
            if not np.isfinite(total):
                raise TrainingDivergedError(step, total)
            optimizer.step_begin()
            optimizer.update("weights", weights, grad)
            step += 1
    return BaselineModel(vocabulary=vocabulary, weights=weights)


def baseline_train_eval(train_corpus, test_corpus, config: BaselineConfig) -> MetricsReport:
    """Train the control-group model and score it with the shared evaluate path."""
    if not test_corpus:
        raise ValueError("cannot evaluate on an empty corpus")
    model = baseline_train(train_corpus, config)
    return evaluate(test_corpus, model.predict_label)
