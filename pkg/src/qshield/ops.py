"""Layer kernels and their exact gradients.

Pure functions over float64 arrays. Each forward returns whatever cache its
backward twin needs; nothing here owns state, so concurrent evaluation over
different samples is safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

REL_ERROR_FLOOR = 1e-8


def _as_matrix(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def conv_full_width(X, F, *, bias: float = 0.0, use_bias: bool = False):
    """Slide filter F vertically over X with fused ReLU.

    The filter spans the full embedding width, so it only moves along the
    character axis and the output has rows(X) - rows(F) + 1 entries.
    Returns (y, pre): activations and the cached pre-activations, which the
    backward pass needs for exact ReLU gating.
    """
    X = _as_matrix(X, "X")
    F = _as_matrix(F, "F")
    n, k = X.shape
    L, kf = F.shape
    if kf != k:
        raise ValueError(f"filter width {kf} != input width {k}")
    if L > n:
        raise ValueError(f"input too short: filter height {L} exceeds {n} input rows")
    windows = sliding_window_view(X, (L, k))[:, 0]  # (n-L+1, L, k)
    pre = np.tensordot(windows, F, axes=([1, 2], [0, 1]))
    if use_bias:
        pre = pre + bias
    return np.maximum(pre, 0.0), pre


def conv_full_width_backward(d_y, X, F, pre, *, use_bias: bool = False):
    """Gradients of conv_full_width; contributions vanish where pre <= 0."""
    X = _as_matrix(X, "X")
    F = _as_matrix(F, "F")
    d_pre = np.asarray(d_y, dtype=np.float64) * (np.asarray(pre) > 0.0)
    L, k = F.shape
    windows = sliding_window_view(X, (L, k))[:, 0]
    d_F = np.tensordot(d_pre, windows, axes=(0, 0))
    d_X = np.zeros_like(X)
    for i in np.nonzero(d_pre)[0]:
        d_X[i : i + L] += d_pre[i] * F
    d_bias = float(d_pre.sum()) if use_bias else 0.0
    return d_F, d_X, d_bias


def max_pool(y) -> tuple[float, int]:
    """Maximum element and its lowest attaining index."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot max-pool an empty vector")
    idx = int(np.argmax(arr))
    return float(arr[idx]), idx


def max_pool_backward(g: float, length: int, argmax: int) -> np.ndarray:
    """Route the upstream scalar entirely to the argmax position."""
    out = np.zeros(length, dtype=np.float64)
    out[argmax] = g
    return out


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax; stable for any finite logits."""
    arr = np.asarray(logits, dtype=np.float64)
    shifted = arr - arr.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax_cross_entropy(logits, target: int) -> tuple[np.ndarray, float]:
    """Class probabilities and the negative log-likelihood of the target."""
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError(f"logits must be a vector of length >= 2, got shape {arr.shape}")
    if not 0 <= target < arr.size:
        raise ValueError(f"target {target} outside [0, {arr.size - 1}]")
    shifted = arr - arr.max()
    log_z = np.log(np.exp(shifted).sum())
    probs = np.exp(shifted - log_z)
    loss = float(log_z - shifted[target])
    return probs, loss


def softmax_cross_entropy_backward(probs, target: int) -> np.ndarray:
    """d loss / d logits = probs - onehot(target)."""
    d = np.array(probs, dtype=np.float64)
    d[target] -= 1.0
    return d


def dropout_apply(v, p: float, mode: str, rng: np.random.Generator | None = None):
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Eval mode is the identity, so serving needs no rescaling. Returns
    (masked vector, 0/1 keep mask).
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    arr = np.asarray(v, dtype=np.float64)
    if mode == "eval" or p == 0.0:
        return arr.copy(), np.ones_like(arr)
    if rng is None:
        raise ValueError("train-mode dropout needs an explicit rng")
    mask = (rng.random(arr.shape) >= p).astype(np.float64)
    return arr * mask / (1.0 - p), mask


def dropout_backward(d_out, mask, p: float) -> np.ndarray:
    """Same mask-and-scale applied to the upstream gradient."""
    return np.asarray(d_out, dtype=np.float64) * np.asarray(mask) / (1.0 - p)


def l2_penalty(tensors, lam: float):
    """lam * sum of squared weights, plus the 2*lam*w gradient per tensor."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    tensors = [np.asarray(t, dtype=np.float64) for t in tensors]
    penalty = lam * float(sum(float(np.sum(t * t)) for t in tensors))
    grads = [2.0 * lam * t for t in tensors]
    return penalty, grads


@dataclass
class GradCheckReport:
    """Outcome of a finite-difference sweep over a set of parameter tensors."""

    max_rel_error: float
    worst_tensor: int
    worst_coord: int
    coords_checked: int
    tolerance: float
    per_tensor: list

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def finite_diff_check(
    loss_fn,
    grad_fn,
    params,
    *,
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    max_coords_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    loss_fn(params) -> scalar and grad_fn(params) -> list of arrays must both
    be deterministic (dropout in eval mode or a fixed mask); the check probes
    this by evaluating the loss twice and refusing to proceed on a mismatch.
    Relative error uses |a - n| / max(|a|, |n|, 1e-8).
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    params = [np.array(p, dtype=np.float64) for p in params]
    first = float(loss_fn(params))
    second = float(loss_fn(params))
    if first != second:
        raise RuntimeError(
            f"loss_fn is not deterministic: {first!r} != {second!r}; "
            "disable dropout or fix the mask before gradient checking"
        )
    grads = [np.asarray(g, dtype=np.float64) for g in grad_fn(params)]
    if len(grads) != len(params):
        raise ValueError(f"grad_fn returned {len(grads)} tensors for {len(params)} params")

    max_rel = 0.0
    worst_tensor = -1
    worst_coord = -1
    checked = 0
    per_tensor = []
    for t, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ValueError(f"gradient {t} shape {g.shape} != param shape {p.shape}")
        coords = np.arange(p.size)
        if max_coords_per_tensor is not None and p.size > max_coords_per_tensor:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(p.size, size=max_coords_per_tensor, replace=False)
        tensor_max = 0.0
        flat = p.reshape(-1)
        for c in coords:
            w = flat[c]
            flat[c] = w + epsilon
            up = float(loss_fn(params))
            flat[c] = w - epsilon
            down = float(loss_fn(params))
            flat[c] = w
            numeric = (up - down) / (2.0 * epsilon)
            analytic = float(g.reshape(-1)[c])
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_ERROR_FLOOR)
            checked += 1
            if rel > tensor_max:
                tensor_max = rel
            if rel > max_rel:
                max_rel = rel
                worst_tensor = t
                worst_coord = int(c)
        per_tensor.append(tensor_max)
    return GradCheckReport(
        max_rel_error=max_rel,
        worst_tensor=worst_tensor,
        worst_coord=worst_coord,
        coords_checked=checked,
        tolerance=tolerance,
        per_tensor=per_tensor,
    )
