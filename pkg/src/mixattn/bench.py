"""Kernel micro-benchmarks and their CSV records."""

from __future__ import annotations

import csv
import hashlib
import os
import statistics
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import tensor as T
from .linear import (
    FeatureMapSpec,
    apply_feature_map,
    batched_outer_accumulate,
    causal_linear_cumsum,
    causal_linear_recurrent,
    linear_attention_noncausal,
)
from .mixed import PartitionConfig, mixed_attention_forward
from .perf import PATH_LINEAR, PATH_SPARSE, WorkloadSize, flops_linear, flops_sparse
from .reference import ROW_BLOCK, softmax_attention
from .window import WindowConfig, windowed_attention

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = [
    "kernel", "mode", "B", "H", "N", "E", "W", "h0", "h1", "repeat", "seconds",
    "flops", "flops_per_sec", "threads", "seed", "precision", "schema_version",
]
MEM_CAP_ENV = "MAE_MEM_CAP_BYTES"
DEFAULT_MEM_CAP = 4 * 1024**3

KERNELS = ("dense", "windowed", "linear", "recurrent", "cumsum", "outer", "mixed")


class MemoryCapError(MemoryError):
    def __init__(self, required: int, cap: int):
        super().__init__(f"kernel needs about {required} bytes, cap is {cap} bytes")
        self.required = required
        self.cap = cap


def memory_cap() -> int:
    return int(os.environ.get(MEM_CAP_ENV, DEFAULT_MEM_CAP))


@dataclass(frozen=True)
class KernelSpec:
    """One benchmarkable kernel. ``window`` applies to windowed/mixed, ``h0`` to mixed."""

    name: str
    window: int | None = None
    h0: int | None = None

    def __post_init__(self):
        if self.name not in KERNELS:
            raise ValueError(f"unknown kernel {self.name!r}; expected one of {KERNELS}")
        if self.name in ("windowed", "mixed") and self.window is None:
            raise ValueError(f"{self.name} kernel needs a window")
        if self.name == "mixed" and self.h0 is None:
            raise ValueError("mixed kernel needs h0")

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        """``dense``, ``windowed:64``, ``mixed:64:3`` and so on."""
        name, *rest = text.strip().split(":")
        window = int(rest[0]) if rest else None
        h0 = int(rest[1]) if len(rest) > 1 else None
        return cls(name, window, h0)

    def __str__(self) -> str:
        parts = [self.name] + [str(x) for x in (self.window, self.h0) if x is not None]
        return ":".join(parts)

    @property
    def path(self) -> int | None:
        if self.name == "windowed":
            return PATH_SPARSE
        if self.name in ("linear", "recurrent", "cumsum", "outer"):
            return PATH_LINEAR
        return None

    def heads_split(self, h: int) -> tuple[int, int]:
        if self.name == "windowed":
            return h, 0
        if self.name == "mixed":
            return self.h0, h - self.h0
        if self.name == "dense":
            return 0, 0
        return 0, h


def kernel_flops(kernel: KernelSpec, size: WorkloadSize, mode: str = "exact") -> int:
    b, h, n, e = size.B, size.H, size.N, size.E
    if kernel.name == "dense":
        # full masked score matrix: scores, 3-op softmax, weighted sum
        return b * h * n * n * (4 * e + 3)
    if kernel.name == "outer":
        return b * h * n * e * e
    sized = WorkloadSize(b, n, h, e, kernel.window or size.W)
    h0, h1 = kernel.heads_split(h)
    return flops_sparse(sized, h0, mode) + flops_linear(sized, h1)


def required_bytes(kernel: KernelSpec, size: WorkloadSize, itemsize: int) -> int:
    b, h, n, e = size.B, size.H, size.N, size.E
    base = 4 * b * h * n * e
    if kernel.name == "dense":
        extra = 4 * b * h * min(n, ROW_BLOCK) * n
    elif kernel.name in ("windowed", "mixed"):
        w = kernel.window
        extra = b * h * n * (8 * (w + 64) + 4 * e)
    elif kernel.name in ("cumsum", "outer"):
        extra = 2 * b * h * n * e * e
    else:
        extra = 4 * b * h * e * e + b * h * n * e
    return (base + extra) * itemsize


@dataclass
class BenchReport:
    kernel: KernelSpec
    size: WorkloadSize
    samples: list[float]
    warmup_seconds: float
    flops: int
    mode: str = "exact"
    threads: int = 1
    seed: int = 0
    precision: str = "f32"
    checksums: list[str] = field(default_factory=list)

    @property
    def path(self) -> int | None:
        return self.kernel.path

    @property
    def min(self) -> float:
        return min(self.samples)

    @property
    def median(self) -> float:
        return statistics.median(self.samples)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.samples)

    @property
    def seconds(self) -> float:
        """Headline time: the minimum over repeats."""
        return self.min

    @property
    def flops_per_sec(self) -> float:
        return self.flops / self.seconds

    def rows(self) -> list[dict]:
        h0, h1 = self.kernel.heads_split(self.size.H)
        common = dict(
            kernel=str(self.kernel), mode=self.mode, B=self.size.B, H=self.size.H,
            N=self.size.N, E=self.size.E, W=self.kernel.window or 0, h0=h0, h1=h1,
            flops=self.flops, threads=self.threads, seed=self.seed,
            precision=self.precision, schema_version=CSV_SCHEMA_VERSION,
        )
        return [
            dict(common, repeat=i, seconds=f"{s:.9g}", flops_per_sec=f"{self.flops / s:.6g}")
            for i, s in enumerate(self.samples)
        ]


def write_csv(path, rows) -> None:
    """Append rows, writing the header only when the file is new or empty."""
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        if fresh:
            writer.writeheader()
        for row in rows:
            writer.writerow({c: row[c] for c in CSV_COLUMNS})


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def reports_from_rows(rows) -> list[BenchReport]:
    """Rebuild reports (one per kernel/size/seed point) from CSV rows."""
    grouped: dict[tuple, dict] = {}
    for r in rows:
        key = (r["kernel"], r["B"], r["H"], r["N"], r["E"], r["W"], r["seed"], r["mode"], r["precision"])
        g = grouped.setdefault(key, {"row": r, "samples": []})
        g["samples"].append(float(r["seconds"]))
    out = []
    for g in grouped.values():
        r = g["row"]
        size = WorkloadSize(int(r["B"]), int(r["N"]), int(r["H"]), int(r["E"]), max(1, int(r["W"])))
        out.append(BenchReport(
            KernelSpec.parse(r["kernel"]), size, g["samples"], float("nan"), int(r["flops"]),
            r["mode"], int(r["threads"]), int(r["seed"]), r["precision"],
        ))
    return out


def checksum(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()[:16]


def random_qkv(size: WorkloadSize, seed: int):
    rng = np.random.default_rng(seed)
    shape = (size.B, size.H, size.N, size.E)
    return tuple(T.tensor4(rng.standard_normal(shape)) for _ in range(3))


def make_kernel(kernel: KernelSpec, size: WorkloadSize, feature_map: FeatureMapSpec | None = None):
    """Return ``f(q, k, v) -> output`` for the kernel."""
    fmap = feature_map or FeatureMapSpec.elu_plus_one()
    if kernel.name == "dense":
        return lambda q, k, v: softmax_attention(q, k, v, causal=True)
    if kernel.name == "windowed":
        cfg = WindowConfig(kernel.window)
        return lambda q, k, v: windowed_attention(q, k, v, cfg)
    if kernel.name == "mixed":
        pcfg = PartitionConfig(size.H, kernel.h0, WindowConfig(kernel.window), fmap)
        return lambda q, k, v: mixed_attention_forward(q, k, v, pcfg)
    if kernel.name == "outer":
        return lambda q, k, v: batched_outer_accumulate(k, v, (0, k.shape[2])).sum(axis=2)
    linear = {"linear": linear_attention_noncausal, "recurrent": causal_linear_recurrent,
              "cumsum": causal_linear_cumsum}[kernel.name]
    return lambda q, k, v: linear(apply_feature_map(q, fmap), apply_feature_map(k, fmap), v)


def measure_kernel(kernel: KernelSpec, size: WorkloadSize, repeats: int = 3, seed: int = 0, *,
                   threads: int = 1, mode: str = "exact", feature_map: FeatureMapSpec | None = None,
                   mem_cap: int | None = None) -> BenchReport:
    """Time ``repeats`` runs after one discarded warm-up run.

    ``threads`` caps the BLAS/OpenMP pools (0 leaves them alone).
    """
    if repeats < 3:
        raise ValueError(f"need at least 3 repeats, got {repeats}")
    cap = memory_cap() if mem_cap is None else mem_cap
    need = required_bytes(kernel, size, T.get_dtype().itemsize)
    if need > cap:
        raise MemoryCapError(need, cap)

    q, k, v = random_qkv(size, seed)
    fn = make_kernel(kernel, size, feature_map)
    limits = threadpool_limits(threads) if threads > 0 else None
    try:
        t0 = time.perf_counter()
        fn(q, k, v)
        warmup = time.perf_counter() - t0
        samples, sums = [], []
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = fn(q, k, v)
            samples.append(time.perf_counter() - t0)
            sums.append(checksum(out))
    finally:
        if limits is not None:
            limits.unregister()
    return BenchReport(kernel, size, samples, warmup, kernel_flops(kernel, size, mode), mode,
                       threads, seed, T.get_precision(), sums)
