"""FLOP counts, two-engine latency estimates and head-partition search.

Path 0 is the sparse (windowed) path and path 1 the linear path. Each path
gets a throughput in FLOP/s; the predicted step time is the slower of the two
paths, and the partition search picks the head split that minimises it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable

PATH_SPARSE = 0
PATH_LINEAR = 1
BALANCE_TOLERANCE = 0.01


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadSize:
    B: int
    N: int
    H: int
    E: int
    W: int = 64

    def __post_init__(self):
        for name in ("B", "N", "H", "E", "W"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass(frozen=True)
class PerfProfile:
    """Path throughputs in FLOP/s.

    When ``flops_per0`` / ``flops_per1`` are set, path work is the linear
    per-head model ``heads * flops_per``; otherwise the closed-form counts of
    :func:`flops_sparse` and :func:`flops_linear` are used.
    """

    perf0: float
    perf1: float
    flops_per0: float | None = None
    flops_per1: float | None = None
    source: str = "calibrated"

    def __post_init__(self):
        if not (self.perf0 > 0 and self.perf1 > 0):
            raise ValueError(f"throughputs must be positive, got {self.perf0}, {self.perf1}")
        for c in (self.flops_per0, self.flops_per1):
            if c is not None and c < 0:
                raise ValueError("per-head FLOP coefficients must be non-negative")

    def scaled(self, factor0: float, factor1: float | None = None) -> "PerfProfile":
        factor1 = factor0 if factor1 is None else factor1
        return PerfProfile(self.perf0 * factor0, self.perf1 * factor1, self.flops_per0, self.flops_per1, self.source)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PerfProfile":
        return cls(**json.loads(text))


# measured Gaudi throughputs: TPC (sparse path) 2.31 TFLOPS, MME (linear path) 13.37 TFLOPS
GAUDI_PAPER = PerfProfile(perf0=2.31e12, perf1=13.37e12, source="gaudi-paper")
BUILTIN_PROFILES = {"gaudi-paper": GAUDI_PAPER}


@dataclass(frozen=True)
class LatencyEstimate:
    latency0: float
    latency1: float

    @property
    def latency(self) -> float:
        return max(self.latency0, self.latency1)

    @property
    def bottleneck(self) -> str:
        hi = self.latency
        if hi == 0 or abs(self.latency0 - self.latency1) <= BALANCE_TOLERANCE * hi:
            return "balanced"
        return "path0" if self.latency0 > self.latency1 else "path1"


def flops_linear(size: WorkloadSize, h1: int) -> int:
    """8 B N (h1 E)^2: feature maps on Q and K, phi(K)^T V, and phi(Q) C."""
    if h1 < 0:
        raise ValueError("h1 must be >= 0")
    return 8 * size.B * size.N * (h1 * size.E) ** 2


def flops_sparse(size: WorkloadSize, h0: int, mode: str = "exact") -> int:
    """Windowed-attention FLOPs.

    ``paper``: 5 B h0 N W. ``exact``: banded scores (2E per entry) plus the
    three-op softmax, plus the 2E-per-entry weighted sum over V.
    """
    if h0 < 0:
        raise ValueError("h0 must be >= 0")
    b, n, w, e = size.B, size.N, size.W, size.E
    if mode == "paper":
        return 5 * b * h0 * n * w
    if mode == "exact":
        return b * h0 * n * w * (2 * e + 3) + 2 * b * h0 * n * w * e
    raise ValueError(f"unknown FLOPs mode {mode!r}")


def path_flops(size: WorkloadSize, h0: int, h1: int, profile: PerfProfile, mode: str = "exact") -> tuple[float, float]:
    f0 = h0 * profile.flops_per0 if profile.flops_per0 is not None else flops_sparse(size, h0, mode)
    f1 = h1 * profile.flops_per1 if profile.flops_per1 is not None else flops_linear(size, h1)
    return f0, f1


def estimate_latency(size: WorkloadSize, h0: int, h1: int, profile: PerfProfile, mode: str = "exact") -> LatencyEstimate:
    if h0 + h1 != size.H:
        raise ValueError(f"h0 + h1 = {h0 + h1} does not equal H = {size.H}")
    f0, f1 = path_flops(size, h0, h1, profile, mode)
    return LatencyEstimate(f0 / profile.perf0, f1 / profile.perf1)


def partition_table(size: WorkloadSize, profile: PerfProfile, mode: str = "exact") -> list[LatencyEstimate]:
    return [estimate_latency(size, h0, size.H - h0, profile, mode) for h0 in range(size.H + 1)]


def optimal_partition(size: WorkloadSize, profile: PerfProfile, mode: str = "exact") -> tuple[int, LatencyEstimate]:
    """Sparse head count minimising max(latency0, latency1); ties go to fewer sparse heads."""
    best_h0, best = 0, None
    for h0, est in enumerate(partition_table(size, profile, mode)):
        if best is None or est.latency < best.latency:
            best_h0, best = h0, est
    return best_h0, best


def path_throughput(measurements: Iterable[tuple[float, float]]) -> float:
    """Aggregate FLOP/s of (flops, seconds) pairs: total work over total time."""
    total_flops = total_seconds = 0.0
    for flops, seconds in measurements:
        if not seconds > 0:
            raise CalibrationError(f"measurement with non-positive elapsed time {seconds}")
        total_flops += flops
        total_seconds += seconds
    if total_seconds == 0:
        raise CalibrationError("no measurements")
    return total_flops / total_seconds


def calibrate(reports, *, min_points: int = 3, min_span: float = 4.0, run_id: str = "local") -> PerfProfile:
    """Fit path throughputs from benchmark reports.

    Each report contributes (flops, headline seconds) to its path. A path
    needs ``min_points`` measurements whose FLOP counts span at least
    ``min_span`` x.
    """
    by_path: dict[int, list[tuple[float, float]]] = {PATH_SPARSE: [], PATH_LINEAR: []}
    for r in reports:
        if r.path not in by_path:
            continue
        by_path[r.path].append((r.flops, r.seconds))
    problems = []
    for path, pts in by_path.items():
        if len(pts) < min_points:
            problems.append(f"path{path}: {len(pts)} measurements, need {min_points}")
            continue
        flops = [f for f, _ in pts]
        if min(flops) <= 0 or max(flops) / min(flops) < min_span:
            problems.append(
                f"path{path}: FLOPs span {min(flops):.3g}..{max(flops):.3g}, need a {min_span:g}x range"
            )
    if problems:
        raise CalibrationError("insufficient calibration coverage: " + "; ".join(problems))
    return PerfProfile(
        perf0=path_throughput(by_path[PATH_SPARSE]),
        perf1=path_throughput(by_path[PATH_LINEAR]),
        source=f"calibrated:{run_id}",
    )


def resolve_profile(name_or_path: str) -> PerfProfile:
    if name_or_path in BUILTIN_PROFILES:
        return BUILTIN_PROFILES[name_or_path]
    with open(name_or_path) as fh:
        return PerfProfile.from_json(fh.read())

