"""Feature-map linear attention.

``softmax(QK^T)V`` is approximated by ``phi(Q) (phi(K)^T V)`` normalised by
``phi(Q) . sum(phi(K))``. Three evaluation orders are provided for the causal
case: a token-by-token recurrence over a running state, a prefix sum over
materialised per-token outer products, and the lane-broadcast outer-product
kernel used to build those products.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ShapeError,
    check_finite,
    check_tensor4,
    elementwise,
    gaussian_orthogonal_matrix,
    is_verify_mode,
    same_dtype,
)

DEGENERATE_THRESHOLD = 1e-30
UNROLL = 8


class DegenerateRowError(ArithmeticError):
    def __init__(self, index):
        super().__init__(f"normalizer vanishes at row {index}")
        self.index = index


@dataclass(frozen=True)
class FeatureMapSpec:
    kind: str  # "elu" or "orf"
    num_features: int | None = None
    seed: int = 0
    matrix: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def elu_plus_one(cls) -> "FeatureMapSpec":
        return cls("elu")

    @classmethod
    def positive_orf(cls, num_features: int, dim: int, seed: int = 0) -> "FeatureMapSpec":
        w = gaussian_orthogonal_matrix(num_features, dim, seed)
        return cls("orf", num_features, seed, w)

    def __post_init__(self):
        if self.kind not in ("elu", "orf"):
            raise ValueError(f"unknown feature map kind {self.kind!r}")
        if self.kind == "orf":
            if self.matrix is None or self.matrix.ndim != 2:
                raise ValueError("orf feature map needs an m x E matrix")
            if self.num_features is None or self.num_features < 1 or self.matrix.shape[0] != self.num_features:
                raise ValueError(f"matrix has {self.matrix.shape[0]} rows, expected m={self.num_features}")

    def feature_dim(self, e: int) -> int:
        return e if self.kind == "elu" else self.num_features


def positive_random_features(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """exp(w_r . x - |x|^2 / 2) / sqrt(m) for each row x; no input rescaling."""
    w = w.astype(x.dtype, copy=False)
    m = w.shape[0]
    proj = x @ w.T
    sq = 0.5 * np.sum(x * x, axis=-1, keepdims=True)
    return np.exp(proj - sq) / x.dtype.type(np.sqrt(m))


def apply_feature_map(t: np.ndarray, spec: FeatureMapSpec) -> np.ndarray:
    check_tensor4(t)
    if spec.kind == "elu":
        return elementwise(t, "elu_plus_one")
    e = t.shape[3]
    if spec.matrix.shape[1] != e:
        raise ShapeError(f"feature matrix {spec.matrix.shape} does not match head size {e}")
    # split the 1/sqrt(E) temperature evenly between queries and keys
    x = t * t.dtype.type(e ** -0.25)
    return positive_random_features(x, spec.matrix)


def _check_linear_inputs(qp, kp, v):
    for name, t in (("Qp", qp), ("Kp", kp), ("V", v)):
        check_tensor4(t, name)
    same_dtype(qp, kp, v)
    if qp.shape != kp.shape or v.shape[:3] != qp.shape[:3]:
        raise ShapeError(f"incompatible Qp {qp.shape}, Kp {kp.shape}, V {v.shape}")


def _normalize(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    bad = np.abs(den) < DEGENERATE_THRESHOLD
    if np.any(bad):
        raise DegenerateRowError(tuple(int(i) for i in np.argwhere(bad)[0][:3]))
    return num / den


def linear_attention_noncausal(qp: np.ndarray, kp: np.ndarray, v: np.ndarray) -> np.ndarray:
    _check_linear_inputs(qp, kp, v)
    c = np.matmul(np.swapaxes(kp, -1, -2), v)  # (B, H, m, Ev)
    z = kp.sum(axis=2)  # (B, H, m)
    num = np.matmul(qp, c)
    den = np.matmul(qp, z[..., None])
    out = _normalize(num, den)
    check_finite(out, "linear_attention_noncausal")
    return out


@dataclass
class CausalState:
    a: np.ndarray  # (..., m, Ev)
    z: np.ndarray  # (..., m)

    @classmethod
    def zeros(cls, lead: tuple, m: int, ev: int, dtype) -> "CausalState":
        return cls(np.zeros(lead + (m, ev), dtype=dtype), np.zeros(lead + (m,), dtype=dtype))

    def consume(self, k_row: np.ndarray, v_row: np.ndarray) -> None:
        self.a += k_row[..., :, None] * v_row[..., None, :]
        self.z += k_row


def causal_linear_recurrent(qp: np.ndarray, kp: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sequential scan: fold token i into the state, then read out row i."""
    _check_linear_inputs(qp, kp, v)
    b, h, n, m = qp.shape
    state = CausalState.zeros((b, h), m, v.shape[3], qp.dtype)
    out = np.empty((b, h, n, v.shape[3]), dtype=qp.dtype)
    for i in range(n):
        state.consume(kp[:, :, i], v[:, :, i])
        q = qp[:, :, i]
        num = np.matmul(q[..., None, :], state.a)[..., 0, :]
        den = np.sum(q * state.z, axis=-1, keepdims=True)
        bad = np.abs(den) < DEGENERATE_THRESHOLD
        if np.any(bad):
            bi, hi, _ = np.argwhere(bad)[0]
            raise DegenerateRowError((int(bi), int(hi), i))
        out[:, :, i] = num / den
    check_finite(out, "causal_linear_recurrent")
    return out


def causal_linear_cumsum(qp: np.ndarray, kp: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Prefix sums over materialised per-token outer products.

    Holds B*H*N outer products of size m x Ev at once; kept as the
    memory-heavy baseline.
    """
    _check_linear_inputs(qp, kp, v)
    g = kp[..., :, None] * v[..., None, :]  # (B, H, N, m, Ev)
    np.cumsum(g, axis=2, out=g)
    zs = np.cumsum(kp, axis=2)
    num = np.matmul(qp[..., None, :], g)[..., 0, :]
    den = np.sum(qp * zs, axis=-1, keepdims=True)
    out = _normalize(num, den)
    check_finite(out, "causal_linear_cumsum")
    return out


def outer_product_broadcast(a: np.ndarray, b: np.ndarray, vector_width: int = 64) -> np.ndarray:
    """a (E,) x b (Ev,) -> (E, Ev), one broadcast lane multiply per row of a.

    Each a[r] is splatted across a vector_width lane and multiplied lane-wise
    with the chunks of b; rows are walked in unrolled groups of eight.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeError(f"expected vectors, got {a.shape} and {b.shape}")
    if b.shape[0] % vector_width:
        raise ShapeError(f"length {b.shape[0]} is not a multiple of vector width {vector_width}")
    dt = np.result_type(a.dtype, b.dtype)
    lanes = b.astype(dt, copy=False).reshape(-1, vector_width)
    out = np.empty((a.shape[0], b.shape[0]), dtype=dt)
    rows = out.reshape(a.shape[0], -1, vector_width)
    for r0 in range(0, a.shape[0], UNROLL):
        for r in range(r0, min(r0 + UNROLL, a.shape[0])):
            splat = np.full(vector_width, a[r], dtype=dt)
            np.multiply(splat, lanes, out=rows[r])
    return out


def batched_outer_accumulate(kp: np.ndarray, v: np.ndarray, row_range: tuple[int, int]) -> np.ndarray:
    """Per-token outer products for sequence rows [start, end).

    Returns shape (B, H, end - start, m, Ev); element ``[:, :, i]`` is
    ``Kp[:, :, start + i] x V[:, :, start + i]``.
    """
    check_tensor4(kp, "Kp")
    check_tensor4(v, "V")
    same_dtype(kp, v)
    if kp.shape[:3] != v.shape[:3]:
        raise ShapeError(f"Kp {kp.shape} and V {v.shape} do not conform")
    start, end = row_range
    n = kp.shape[2]
    if not 0 <= start <= end <= n:
        raise ShapeError(f"row range {row_range} outside 0..{n}")
    ks = kp[:, :, start:end]
    return ks[..., :, None] * v[:, :, start:end, None, :]


def partition_rows(n: int, workers: int) -> list[tuple[int, int]]:
    """Split 0..n into ``workers`` contiguous, near-equal ranges."""
    if workers < 1:
        raise ValueError("need at least one worker")
    bounds = np.linspace(0, n, workers + 1).round().astype(int)
    return [(int(bounds[i]), int(bounds[i + 1])) for i in range(workers)]


def check_disjoint_cover(ranges, n: int) -> None:
    covered = np.zeros(n, dtype=np.int64)
    for s, e in ranges:
        covered[s:e] += 1
    if np.any(covered > 1):
        raise ValueError(f"row ranges overlap at row {int(np.argmax(covered > 1))}")
    if np.any(covered == 0):
        raise ValueError(f"row ranges miss row {int(np.argmin(covered))}")


def outer_accumulate(kp: np.ndarray, v: np.ndarray, ranges=None) -> np.ndarray:
    """Sum of Kp_i x V_i over all rows, built from per-range partial sums."""
    n = kp.shape[2]
    if ranges is None:
        ranges = partition_rows(n, 1)
    if is_verify_mode():
        check_disjoint_cover(ranges, n)
    total = np.zeros(kp.shape[:2] + (kp.shape[3], v.shape[3]), dtype=kp.dtype)
    for r in ranges:
        total += batched_outer_accumulate(kp, v, r).sum(axis=2)
    return total
