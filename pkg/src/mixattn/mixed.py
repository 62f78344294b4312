"""Head-partitioned mixed attention.

The first ``h0`` heads go through windowed attention and the remaining
``h1 = H - h0`` through feature-map linear attention; outputs are stitched
back together in head order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .linear import (
    FeatureMapSpec,
    apply_feature_map,
    causal_linear_recurrent,
    linear_attention_noncausal,
)
from .tensor import ShapeError, check_tensor4, same_dtype
from .window import WindowConfig, windowed_attention


class ConfigError(ValueError):
    pass


def sparse_head_count(heads: int, tau: float) -> int:
    """round(H * tau), with exact halves going to the sparse group."""
    if not 0 <= tau <= 1:
        raise ConfigError(f"tau must lie in [0, 1], got {tau}")
    # tolerate representation error so that e.g. 16 * (3/16) lands on 3
    return int(math.floor(heads * tau + 0.5 + 1e-9))


@dataclass(frozen=True)
class PartitionConfig:
    heads: int
    sparse_heads: int
    window: WindowConfig
    feature_map: FeatureMapSpec = field(default_factory=FeatureMapSpec.elu_plus_one)
    causal: bool = True

    def __post_init__(self):
        if self.heads < 1:
            raise ConfigError(f"need at least one head, got {self.heads}")
        if not 0 <= self.sparse_heads <= self.heads:
            raise ConfigError(f"sparse head count {self.sparse_heads} outside 0..{self.heads}")

    @classmethod
    def from_tau(cls, heads: int, tau: float, window: WindowConfig, *args, **kw) -> "PartitionConfig":
        return cls(heads, sparse_head_count(heads, tau), window, *args, **kw)

    @property
    def linear_heads(self) -> int:
        return self.heads - self.sparse_heads

    @property
    def tau(self) -> float:
        return self.sparse_heads / self.heads


def split_heads(q, k, v, cfg: PartitionConfig):
    """Views ((Qs, Ks, Vs), (Ql, Kl, Vl)) over the sparse and linear head groups."""
    if q.shape[1] != cfg.heads:
        raise ConfigError(f"inputs have {q.shape[1]} heads, config expects {cfg.heads}")
    h0 = cfg.sparse_heads
    sparse = tuple(t[:, :h0] for t in (q, k, v))
    linear = tuple(t[:, h0:] for t in (q, k, v))
    return sparse, linear


def sparse_path(q, k, v, cfg: PartitionConfig) -> np.ndarray:
    return windowed_attention(q, k, v, cfg.window, causal=cfg.causal)


def linear_path(q, k, v, cfg: PartitionConfig) -> np.ndarray:
    qp = apply_feature_map(q, cfg.feature_map)
    kp = apply_feature_map(k, cfg.feature_map)
    if cfg.causal:
        return causal_linear_recurrent(qp, kp, v)
    return linear_attention_noncausal(qp, kp, v)


def mixed_attention_forward(q, k, v, cfg: PartitionConfig, concurrent: bool = False) -> np.ndarray:
    """Run both head groups and reassemble (B, H, N, Ev).

    With ``concurrent=True`` the two groups run on separate threads; the
    result is the same either way.
    """
    for name, t in (("Q", q), ("K", k), ("V", v)):
        check_tensor4(t, name)
    dt = same_dtype(q, k, v)
    if q.shape != k.shape or v.shape[:3] != q.shape[:3]:
        raise ShapeError(f"incompatible Q {q.shape}, K {k.shape}, V {v.shape}")
    sparse, linear = split_heads(q, k, v, cfg)
    jobs = []
    if cfg.sparse_heads:
        jobs.append((slice(0, cfg.sparse_heads), sparse_path, sparse))
    if cfg.linear_heads:
        jobs.append((slice(cfg.sparse_heads, cfg.heads), linear_path, linear))

    out = np.empty(q.shape[:3] + (v.shape[3],), dtype=dt)
    if concurrent and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
            futures = [(sl, pool.submit(fn, *args, cfg)) for sl, fn, args in jobs]
            for sl, fut in futures:
                out[:, sl] = fut.result()
    else:
        for sl, fn, args in jobs:
            out[:, sl] = fn(*args, cfg)
    return out
