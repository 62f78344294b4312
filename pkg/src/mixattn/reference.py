"""Exact softmax attention, used as the ground truth for every approximation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, check_finite, check_tensor4, same_dtype

# rows of queries handled per block; bounds the live score buffer to ROW_BLOCK x N
ROW_BLOCK = 512


@dataclass(frozen=True)
class QkvProjection:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __post_init__(self):
        shapes = {w.shape for w in (self.w_q, self.w_k, self.w_v)}
        if len(shapes) != 1 or self.w_q.ndim != 2:
            raise ShapeError(f"projection matrices must share one 2-d shape, got {sorted(shapes)}")

    @property
    def d_x(self) -> int:
        return self.w_q.shape[0]


def project_qkv(x: np.ndarray, proj: QkvProjection, heads: int):
    """Project ``x`` of shape (B, 1, N, D_x) into per-head Q, K, V."""
    check_tensor4(x, "x")
    if x.shape[1] != 1 or x.shape[3] != proj.d_x:
        raise ShapeError(f"x must be (B, 1, N, {proj.d_x}), got {x.shape}")
    cols = proj.w_q.shape[1]
    if heads < 1 or cols % heads:
        raise ShapeError(f"{cols} projection columns do not split into {heads} heads")
    e_out = cols // heads
    b, _, n, _ = x.shape
    out = []
    for w in (proj.w_q, proj.w_k, proj.w_v):
        same_dtype(x, w)
        y = x[:, 0] @ w  # (B, N, H*E)
        out.append(np.ascontiguousarray(y.reshape(b, n, heads, e_out).transpose(0, 2, 1, 3)))
    return tuple(out)


def softmax_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, causal: bool = False) -> np.ndarray:
    """softmax(Q K^T / sqrt(E)) V, optionally with a causal mask.

    Query rows are processed in blocks against the full key set, as in
    standard masked attention. For causal rows the max, the exponentials and
    the normaliser range only over keys ``0..=i``; masked entries are never
    exponentiated.
    """
    for name, t in (("Q", q), ("K", k), ("V", v)):
        check_tensor4(t, name)
    dt = same_dtype(q, k, v)
    if q.shape[:3] != k.shape[:3] or k.shape[:3] != v.shape[:3] or q.shape[3] != k.shape[3]:
        raise ShapeError(f"incompatible Q {q.shape}, K {k.shape}, V {v.shape}")
    b, h, n, e = q.shape
    scale = dt.type(1 / math.sqrt(e))
    out = np.empty((b, h, n, v.shape[3]), dtype=dt)
    for r0 in range(0, n, ROW_BLOCK):
        r1 = min(n, r0 + ROW_BLOCK)
        s = np.matmul(q[:, :, r0:r1], np.swapaxes(k, -1, -2)) * scale
        if causal:
            live = np.arange(n)[None, :] <= np.arange(r0, r1)[:, None]
            row_max = np.max(s, axis=-1, keepdims=True, where=live, initial=-np.inf)
            p = np.exp(s - row_max, where=live, out=np.zeros_like(s))
        else:
            p = np.exp(s - s.max(axis=-1, keepdims=True))
        p /= p.sum(axis=-1, keepdims=True)
        out[:, :, r0:r1] = np.matmul(p, v)
    check_finite(out, "softmax_attention")
    return out


def attention_probs(q: np.ndarray, k: np.ndarray, causal: bool = False) -> np.ndarray:
    """Full N x N probability matrix (small inputs only)."""
    dt = same_dtype(q, k)
    n, e = q.shape[2], q.shape[3]
    s = np.matmul(q, np.swapaxes(k, -1, -2)) * dt.type(1 / math.sqrt(e))
    live = np.tril(np.ones((n, n), dtype=bool)) if causal else np.ones((n, n), dtype=bool)
    row_max = np.max(s, axis=-1, keepdims=True, where=live, initial=-np.inf)
    p = np.exp(s - row_max, where=live, out=np.zeros_like(s))
    return p / p.sum(axis=-1, keepdims=True)
