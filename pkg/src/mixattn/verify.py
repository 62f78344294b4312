"""Seeded self-check suites comparing every kernel with an independent route."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linear, perf, reference, window
from . import tensor as T

SUITES = ("oracle", "linear", "partition")


@dataclass
class Check:
    name: str
    max_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_err <= self.tolerance)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} {self.max_err:.3e} {self.tolerance:.1e}"


def max_abs(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def rel_err(a, b) -> float:
    """Max abs difference scaled by the largest magnitude in ``b``."""
    scale = float(np.max(np.abs(b)))
    return max_abs(a, b) / max(scale, np.finfo(np.float64).tiny)


def scalar_softmax_attention(q, k, v, causal=False):
    """Loop-per-scalar attention for tiny inputs."""
    b, h, n, e = q.shape
    out = np.zeros((b, h, n, v.shape[3]))
    for bi in range(b):
        for hi in range(h):
            for i in range(n):
                keys = range(i + 1) if causal else range(n)
                scores = [sum(float(q[bi, hi, i, t]) * float(k[bi, hi, j, t]) for t in range(e)) / math.sqrt(e)
                          for j in keys]
                top = max(scores)
                ws = [math.exp(s - top) for s in scores]
                tot = sum(ws)
                for j, w in zip(keys, ws):
                    out[bi, hi, i] += (w / tot) * v[bi, hi, j].astype(np.float64)
    return out


def _qkv(rng, shape):
    return tuple(T.tensor4(rng.standard_normal(shape)) for _ in range(3))


def oracle_suite(seed: int, instances: int = 20) -> list[Check]:
    rng = np.random.default_rng(seed)
    checks = []

    q, k, v = _qkv(rng, (1, 1, 4, 2))
    for causal in (False, True):
        err = max_abs(reference.softmax_attention(q, k, v, causal), scalar_softmax_attention(q, k, v, causal))
        checks.append(Check(f"softmax_vs_scalar_{'causal' if causal else 'full'}", err, 1e-6))

    for prec, tol in (("f32", 1e-5), ("f64", 1e-11)):
        worst = 0.0
        with T.precision(prec):
            for _ in range(instances):
                n = int(rng.integers(1, 257))
                shape = (int(rng.integers(1, 3)), int(rng.integers(1, 5)), n, int(rng.choice([16, 64])))
                q, k, v = _qkv(rng, shape)
                cfg = window.WindowConfig.covering(n)
                got = window.windowed_attention(q, k, v, cfg)
                want = reference.softmax_attention(q, k, v, causal=True)
                worst = max(worst, max_abs(got, want))
        checks.append(Check(f"windowed_vs_dense_{prec}", worst, tol))

    with T.precision("f64"):
        q, k, v = _qkv(rng, (2, 2, 96, 16))
        cfg = window.WindowConfig.covering(2 * 96)
        err = max_abs(window.windowed_attention(q, k, v, cfg, causal=False),
                      reference.softmax_attention(q, k, v, causal=False))
        checks.append(Check("bidirectional_window_vs_dense_f64", err, 1e-11))

        q, k, _ = _qkv(rng, (2, 3, 50, 8))
        probs = reference.attention_probs(q, k, causal=True)
        err = max(max_abs(probs.sum(-1), 1.0), float(np.abs(np.triu(probs, 1)).max()))
        checks.append(Check("causal_probs_rows", err, 1e-6))

        s = window.windowed_softmax(window.banded_scores(q, k, window.WindowConfig(64)))
        checks.append(Check("band_rows_sum_to_one", max_abs(s.data.sum(-1), 1.0), 1e-6))
    return checks


def linear_suite(seed: int, instances: int = 20) -> list[Check]:
    rng = np.random.default_rng(seed)
    checks = []
    for prec, tol in (("f32", 1e-4), ("f64", 1e-10)):
        worst = 0.0
        with T.precision(prec):
            for _ in range(instances):
                e = int(rng.integers(1, 65))
                shape = (int(rng.integers(1, 3)), int(rng.integers(1, 5)), int(rng.integers(1, 257)), e)
                q, k, v = _qkv(rng, shape)
                spec = linear.FeatureMapSpec.positive_orf(int(rng.integers(1, 129)), e, int(rng.integers(2**31)))
                qp, kp = linear.apply_feature_map(q, spec), linear.apply_feature_map(k, spec)
                worst = max(worst, rel_err(linear.causal_linear_recurrent(qp, kp, v),
                                           linear.causal_linear_cumsum(qp, kp, v)))
        checks.append(Check(f"recurrent_vs_cumsum_{prec}", worst, tol))

    q, k, v = _qkv(rng, (1, 2, 32, 16))
    qp, kp = (linear.apply_feature_map(t, linear.FeatureMapSpec.elu_plus_one()) for t in (q, k))
    causal = linear.causal_linear_recurrent(qp, kp, v)
    worst = 0.0
    for i in range(32):
        nc = linear.linear_attention_noncausal(qp[:, :, : i + 1], kp[:, :, : i + 1], v[:, :, : i + 1])
        worst = max(worst, rel_err(causal[:, :, i], nc[:, :, i]))
    checks.append(Check("prefix_consistency", worst, 1e-4))

    mismatched = 0
    for _ in range(50):
        a, b = rng.standard_normal(64).astype(np.float32), rng.standard_normal(64).astype(np.float32)
        got = linear.outer_product_broadcast(a, b)
        want = np.empty((64, 64), dtype=np.float32)
        for r in range(64):
            for c in range(64):
                want[r, c] = a[r] * b[c]
        mismatched += int(np.count_nonzero(got != want))
    checks.append(Check("outer_product_bitwise_mismatches", float(mismatched), 0.0))

    _, k, v = _qkv(rng, (2, 2, 40, 64))
    kp = linear.apply_feature_map(k, linear.FeatureMapSpec.elu_plus_one())
    with T.verify_mode():
        summed = linear.outer_accumulate(kp, v, linear.partition_rows(40, 3))
    checks.append(Check("outer_accumulate_vs_matmul", rel_err(summed, T.batched_matmul(np.swapaxes(kp, 2, 3), v)), 1e-4))

    with T.precision("f64"):
        q, k, v = _qkv(rng, (1, 2, 24, 8))
        qp, kp = (linear.apply_feature_map(t, linear.FeatureMapSpec.elu_plus_one()) for t in (q, k))
        a = qp @ np.swapaxes(kp, 2, 3)
        explicit = (a / a.sum(-1, keepdims=True)) @ v
        checks.append(Check("noncausal_vs_explicit", rel_err(linear.linear_attention_noncausal(qp, kp, v), explicit), 1e-10))
    return checks


def brute_force_partition(size, profile, mode):
    """Independent argmin over h0: evaluates the FLOP formulas inline."""
    b, n, h, e, w = size.B, size.N, size.H, size.E, size.W
    best = None
    for h0 in range(h + 1):
        h1 = h - h0
        if profile.flops_per0 is not None:
            f0 = h0 * profile.flops_per0
        elif mode == "paper":
            f0 = 5 * b * h0 * n * w
        else:
            f0 = 2 * b * h0 * e * n * w + 3 * b * h0 * n * w + 2 * b * h0 * n * w * e
        f1 = h1 * profile.flops_per1 if profile.flops_per1 is not None else 8 * b * n * (h1 * e) ** 2
        cost = max(f0 / profile.perf0, f1 / profile.perf1)
        if best is None or cost < best[1]:
            best = (h0, cost)
    return best[0]


def partition_suite(seed: int, profiles: int = 20) -> list[Check]:
    rng = np.random.default_rng(seed)
    pool = [perf.GAUDI_PAPER]
    for _ in range(profiles):
        ratio = 10 ** rng.uniform(-3, 3)
        pool.append(perf.PerfProfile(perf0=1e12, perf1=1e12 * ratio))
    mismatches = 0
    for h in range(1, 33):
        for w in (64, 128, 256):
            size = perf.WorkloadSize(B=4, N=4096, H=h, E=64, W=w)
            for mode in ("paper", "exact"):
                for prof in pool:
                    h0, _ = perf.optimal_partition(size, prof, mode)
                    mismatches += h0 != brute_force_partition(size, prof, mode)
    checks = [Check("partition_vs_bruteforce", float(mismatches), 0.0)]

    size = perf.WorkloadSize(B=4, N=4096, H=16, E=64, W=64)
    checks.append(Check("flops_linear_regression", abs(perf.flops_linear(size, 13) - 90_731_184_128), 0.0))
    unit = perf.WorkloadSize(1, 1, 1, 1, 1)
    checks.append(Check("flops_sparse_unit", abs(perf.flops_sparse(unit, 1, "paper") - 5) + perf.flops_sparse(unit, 0, "exact"), 0.0))
    return checks


_RUNNERS = {"oracle": oracle_suite, "linear": linear_suite, "partition": partition_suite}


def run_suite(name: str, seed: int = 0) -> list[Check]:
    if name == "all":
        return [c for s in SUITES for c in _RUNNERS[s](seed)]
    if name not in _RUNNERS:
        raise KeyError(f"unknown suite {name!r}; expected one of {SUITES + ('all',)}")
    return _RUNNERS[name](seed)
