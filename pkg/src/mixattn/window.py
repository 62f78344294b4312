"""Sliding-window (banded) attention.

Each query attends to a fixed band of keys. In the causal form the band is the
query itself plus its ``W - 1`` predecessors; the bidirectional form reaches
``W // 2`` tokens each way. Rows near the sequence edges clamp the band, and
the clamped positions are tracked as per-row live ranges rather than padded
values.

Scores and the weighted sum are computed block-wise: query rows are grouped in
blocks of ``T`` and multiplied against the ``T + L - 1`` keys their band
touches, so the work is O(N * W) rather than O(N^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, check_finite, check_tensor4, same_dtype

VECTOR_WIDTHS = (8, 16, 32, 64)
# local exp staging buffer, in scalars (80 KB of f32 lanes, rounded to a power of two)
SCRATCH_CAP = 4096


@dataclass(frozen=True)
class WindowConfig:
    window: int
    vector_width: int = 64

    def __post_init__(self):
        if self.vector_width not in VECTOR_WIDTHS:
            raise ValueError(f"vector_width must be one of {VECTOR_WIDTHS}, got {self.vector_width}")
        if self.window < 1 or self.window % self.vector_width:
            raise ValueError(
                f"window must be a positive multiple of {self.vector_width}, got {self.window}"
            )
        if self.window > SCRATCH_CAP:
            raise ValueError(f"window {self.window} exceeds the {SCRATCH_CAP}-scalar scratch buffer")

    @classmethod
    def covering(cls, n: int, vector_width: int = 64) -> "WindowConfig":
        """Smallest valid window with W >= n."""
        return cls(max(1, math.ceil(n / vector_width)) * vector_width, vector_width)

    def extent(self, causal: bool = True) -> tuple[int, int]:
        """(keys behind, keys ahead) of each query, self excluded."""
        if causal:
            return self.window - 1, 0
        return self.window // 2, self.window // 2


@dataclass(frozen=True)
class BandedScores:
    """Row ``n`` holds entries for keys ``n - back + j``, ``j in [0, L)``.

    Only ``lo[n] <= j < hi[n]`` are live. Entries outside that range are the
    absent sentinel and always hold 0.
    """

    data: np.ndarray  # (B, H, N, L)
    back: int
    lo: np.ndarray  # (N,)
    hi: np.ndarray  # (N,)

    @property
    def width(self) -> int:
        return self.data.shape[3]

    def live_mask(self) -> np.ndarray:
        j = np.arange(self.width)[None, :]
        return (j >= self.lo[:, None]) & (j < self.hi[:, None])

    def live_count(self) -> np.ndarray:
        return self.hi - self.lo

    def to_dense(self) -> np.ndarray:
        """Scatter the band into an (B, H, N, N) matrix, zeros elsewhere."""
        b, h, n, width = self.data.shape
        out = np.zeros((b, h, n, n), dtype=self.data.dtype)
        for j in range(width):
            rows = np.nonzero((self.lo <= j) & (j < self.hi))[0]
            out[:, :, rows, rows - self.back + j] = self.data[:, :, rows, j]
        return out


def _band_limits(n: int, back: int, fwd: int):
    rows = np.arange(n)
    lo = np.maximum(0, back - rows)
    hi = np.minimum(back + fwd + 1, n - rows + back)
    return lo, hi


def _block_rows(width: int) -> int:
    return max(64, width)


def _key_blocks(x: np.ndarray, back: int, width: int, block: int, nblocks: int) -> np.ndarray:
    """Gather the (T + L - 1)-row key span of every query block: (B, H, nb, T+L-1, E)."""
    n = x.shape[2]
    span = block + width - 1
    total = nblocks * block + width - 1
    padded = np.zeros(x.shape[:2] + (total, x.shape[3]), dtype=x.dtype)
    padded[:, :, back : back + n] = x
    idx = (np.arange(nblocks) * block)[:, None] + np.arange(span)[None, :]
    return padded[:, :, idx]


def _band_index(block: int, width: int) -> np.ndarray:
    return np.arange(block)[:, None] + np.arange(width)[None, :]


def banded_scores(q: np.ndarray, k: np.ndarray, cfg: WindowConfig, causal: bool = True) -> BandedScores:
    check_tensor4(q, "Q")
    check_tensor4(k, "K")
    dt = same_dtype(q, k)
    if q.shape != k.shape:
        raise ShapeError(f"Q {q.shape} and K {k.shape} must match")
    b, h, n, e = q.shape
    back, fwd = cfg.extent(causal)
    width = back + fwd + 1
    block = _block_rows(width)
    nb = math.ceil(n / block)

    qb = np.zeros((b, h, nb * block, e), dtype=dt)
    qb[:, :, :n] = q
    qb = qb.reshape(b, h, nb, block, e)
    kb = _key_blocks(k, back, width, block, nb)
    full = np.matmul(qb, np.swapaxes(kb, -1, -2))  # (B, H, nb, T, T+L-1)
    idx = np.broadcast_to(_band_index(block, width), full.shape[:3] + (block, width))
    band = np.take_along_axis(full, idx, axis=-1).reshape(b, h, nb * block, width)[:, :, :n]
    band = band * dt.type(1 / math.sqrt(e))

    lo, hi = _band_limits(n, back, fwd)
    j = np.arange(width)[None, :]
    band[..., ~((j >= lo[:, None]) & (j < hi[:, None]))] = 0
    return BandedScores(np.ascontiguousarray(band), back, lo, hi)


def windowed_softmax(s: BandedScores, vector_width: int = 64) -> BandedScores:
    """Row softmax over live band entries, staged through a lane-chunked scratch.

    Pass one exponentiates each vector_width chunk into scratch and keeps a
    per-lane running sum; the lanes are then reduced, inverted once, and pass
    two multiplies the staged exponentials by that reciprocal.
    """
    x = s.data
    dt = x.dtype
    width = s.width
    chunks = math.ceil(width / vector_width)
    if chunks * vector_width > SCRATCH_CAP:
        raise ValueError(f"band of {width} exceeds the {SCRATCH_CAP}-scalar scratch buffer")
    live = s.live_mask()
    # max subtraction keeps exp finite for large scores
    row_max = np.max(x, axis=-1, keepdims=True, where=live, initial=-np.inf)

    padded_w = chunks * vector_width
    xs = np.zeros(x.shape[:3] + (padded_w,), dtype=dt)
    xs[..., :width] = x - row_max
    mask = np.zeros((x.shape[2], padded_w), dtype=bool)
    mask[:, :width] = live

    scratch = np.empty(x.shape[:3] + (chunks, vector_width), dtype=dt)
    lane_sum = np.zeros(x.shape[:3] + (vector_width,), dtype=dt)
    for c in range(chunks):
        sl = slice(c * vector_width, (c + 1) * vector_width)
        y = np.exp(xs[..., sl], where=mask[:, sl], out=np.zeros_like(xs[..., sl]))
        scratch[..., c, :] = y
        lane_sum += y
    recip = 1 / lane_sum.sum(axis=-1, keepdims=True)
    out = np.empty_like(xs)
    for c in range(chunks):
        out[..., c * vector_width : (c + 1) * vector_width] = scratch[..., c, :] * recip
    return BandedScores(np.ascontiguousarray(out[..., :width]), s.back, s.lo, s.hi)


def banded_weighted_sum(p: BandedScores, v: np.ndarray) -> np.ndarray:
    """out[n] = sum_j p[n, j] * V[n - back + j] over live j."""
    check_tensor4(v, "V")
    dt = same_dtype(p.data, v)
    b, h, n, width = p.data.shape
    if v.shape[:3] != (b, h, n):
        raise ShapeError(f"probabilities {p.data.shape} do not conform with V {v.shape}")
    block = _block_rows(width)
    nb = math.ceil(n / block)
    span = block + width - 1

    pb = np.zeros((b, h, nb * block, width), dtype=dt)
    pb[:, :, :n] = p.data
    pb = pb.reshape(b, h, nb, block, width)
    dense = np.zeros((b, h, nb, block, span), dtype=dt)
    idx = np.broadcast_to(_band_index(block, width), pb.shape)
    np.put_along_axis(dense, idx, pb, axis=-1)
    vb = _key_blocks(v, p.back, width, block, nb)
    out = np.matmul(dense, vb).reshape(b, h, nb * block, v.shape[3])[:, :, :n]
    return np.ascontiguousarray(out)


def windowed_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, cfg: WindowConfig, causal: bool = True) -> np.ndarray:
    if v.shape[:3] != q.shape[:3]:
        raise ShapeError(f"V {v.shape} does not conform with Q {q.shape}")
    s = banded_scores(q, k, cfg, causal)
    p = windowed_softmax(s, cfg.vector_width)
    out = banded_weighted_sum(p, v)
    check_finite(out, "windowed_attention")
    return out
