"""Command-line front end: verify, bench, partition, run, calibrate."""

from __future__ import annotations

import argparse
import itertools
import json
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import bench, perf, verify
from . import tensor as T
from .linear import FeatureMapSpec
from .mixed import PartitionConfig, mixed_attention_forward, sparse_head_count
from .reference import softmax_attention
from .window import WindowConfig, windowed_attention

DEFAULTS = {
    "B": "4", "H": "16", "E": "64", "tau": None, "h0": None, "heads_mode": "causal",
    "feature_map": "elu", "m": 64, "seed": 0, "repeats": 3, "threads": 1,
    "precision": "f32", "mode": "exact", "out": None, "dry_run": False,
}
COMMAND_DEFAULTS = {
    "verify": {"N": "128", "W": "64"},
    "bench": {"N": "1024,2048,4096", "W": "64,128", "kernels": "dense,windowed"},
    "partition": {"N": "4096", "W": "64", "profile": "gaudi-paper"},
    "run": {"N": "0", "W": "64", "kernel": "mixed"},
    "calibrate": {"N": "512,1024,2048,4096", "W": "64", "kernels": "windowed,linear", "B": "1", "H": "4"},
}


class UsageError(Exception):
    pass


def _ints(text) -> list[int]:
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _one(args, name) -> int:
    vals = _ints(getattr(args, name))
    if len(vals) != 1:
        raise UsageError(f"--{name} takes a single value for this command, got {vals}")
    return vals[0]


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    g = shared.add_argument_group("shared")
    for dim in ("B", "H", "N", "E", "W"):
        g.add_argument(f"--{dim}", help="integer (bench/calibrate take comma lists for N and W)")
    g.add_argument("--tau", type=float, help="fraction of heads on the sparse path")
    g.add_argument("--h0", type=int, help="sparse head count (overrides --tau)")
    g.add_argument("--heads-mode", choices=("causal", "self"), help="causal or bidirectional attention")
    g.add_argument("--feature-map", choices=("elu", "orf"))
    g.add_argument("--m", type=int, help="random features for --feature-map orf")
    g.add_argument("--seed", type=int)
    g.add_argument("--repeats", type=int)
    g.add_argument("--threads", type=int, help="0 = library default, 1 = pinned")
    g.add_argument("--precision", choices=("f32", "f64"))
    g.add_argument("--mode", choices=("paper", "exact"), help="sparse FLOPs model")
    g.add_argument("--out", help="output file (csv, report or profile json)")
    g.add_argument("--config", help="JSON file with flat keys mirroring the flags")
    g.add_argument("--dry-run", action="store_true", default=None)

    parser = argparse.ArgumentParser(prog="mixattn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", parents=[shared], help="run the self-check suites")
    p.add_argument("--suite", choices=verify.SUITES + ("all",), default="all")

    p = sub.add_parser("bench", parents=[shared], help="sweep kernels over a size grid")
    p.add_argument("--kernels", help="comma list, e.g. dense,windowed,windowed:128,linear,mixed")

    p = sub.add_parser("partition", parents=[shared], help="latency table and minimax head split")
    p.add_argument("--profile", help="'gaudi-paper' or a calibrated profile JSON")

    p = sub.add_parser("run", parents=[shared], help="forward pass on GFT4 tensor files")
    p.add_argument("--q", required=True)
    p.add_argument("--k", required=True)
    p.add_argument("--v", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--kernel", choices=("mixed", "dense", "windowed", "linear"))

    p = sub.add_parser("calibrate", parents=[shared], help="fit path throughputs from micro-benchmarks")
    p.add_argument("--kernels", help="kernels to time (one sparse-path, one linear-path)")
    p.add_argument("--csv", help="also append the raw timing rows here")
    return parser


def resolve_args(argv=None) -> argparse.Namespace:
    """Parse flags; values come from flags, then the JSON config, then defaults."""
    args = build_parser().parse_args(argv)
    config = {}
    if args.config:
        with open(args.config) as fh:
            config = {k.replace("-", "_"): v for k, v in json.load(fh).items()}
    merged = dict(DEFAULTS, **COMMAND_DEFAULTS[args.command])
    for key, default in merged.items():
        if getattr(args, key, None) is None:
            setattr(args, key, config.get(key, default))
    return args


def _feature_map(args, e: int) -> FeatureMapSpec:
    if args.feature_map == "orf":
        return FeatureMapSpec.positive_orf(int(args.m), e, int(args.seed))
    return FeatureMapSpec.elu_plus_one()


def _sparse_heads(args, h: int) -> int:
    if args.h0 is not None:
        return int(args.h0)
    return sparse_head_count(h, 0.5 if args.tau is None else float(args.tau))


def cmd_verify(args, out) -> int:
    checks = verify.run_suite(args.suite, int(args.seed))
    lines = [c.line() for c in checks]
    failed = sum(not c.passed for c in checks)
    lines.append(f"{len(checks) - failed}/{len(checks)} checks passed")
    text = "\n".join(lines) + "\n"
    out.write(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 1 if failed else 0


def _bench_grid(args):
    kernels = []
    for name in str(args.kernels).split(","):
        name = name.strip()
        if name in ("windowed", "mixed"):
            for w in _ints(args.W):
                h0 = _sparse_heads(args, _one(args, "H")) if name == "mixed" else None
                kernels.append(bench.KernelSpec(name, w, h0))
        else:
            kernels.append(bench.KernelSpec.parse(name))
    return list(itertools.product(_ints(args.N), kernels))


def cmd_bench(args, out) -> int:
    b, h, e = _one(args, "B"), _one(args, "H"), _one(args, "E")
    grid = _bench_grid(args)
    out.write(f"grid: B={b} H={h} E={e} N={_ints(args.N)} kernels={[str(k) for _, k in grid[:len(grid) // len(_ints(args.N))]]}"
              f" repeats={args.repeats} ({len(grid)} points)\n")
    if args.dry_run:
        return 0
    for n, kernel in grid:
        size = perf.WorkloadSize(b, n, h, e, kernel.window or 64)
        fmap = _feature_map(args, e)
        try:
            rep = bench.measure_kernel(kernel, size, int(args.repeats), int(args.seed),
                                       threads=int(args.threads), mode=args.mode, feature_map=fmap)
        except bench.MemoryCapError as exc:
            out.write(f"skip N={n} {kernel}: {exc}\n")
            continue
        out.write(f"N={n:<6d} {str(kernel):<14s} min={rep.min:.6f}s median={rep.median:.6f}s "
                  f"{rep.flops_per_sec:.3e} FLOP/s\n")
        if args.out:
            bench.write_csv(args.out, rep.rows())
    return 0


def format_partition_table(size: perf.WorkloadSize, profile: perf.PerfProfile, mode: str) -> str:
    best, _ = perf.optimal_partition(size, profile, mode)
    lines = [f"# B={size.B} N={size.N} H={size.H} E={size.E} W={size.W} mode={mode} "
             f"perf0={profile.perf0:.6g} perf1={profile.perf1:.6g} ({profile.source})",
             f"  {'h0':>3s} {'h1':>3s} {'latency0_s':>14s} {'latency1_s':>14s} bottleneck"]
    for h0, est in enumerate(perf.partition_table(size, profile, mode)):
        mark = "*" if h0 == best else " "
        lines.append(f"{mark} {h0:3d} {size.H - h0:3d} {est.latency0:14.6e} {est.latency1:14.6e} {est.bottleneck}")
    return "\n".join(lines) + "\n"


def cmd_partition(args, out) -> int:
    size = perf.WorkloadSize(_one(args, "B"), _one(args, "N"), _one(args, "H"), _one(args, "E"), _one(args, "W"))
    profile = perf.resolve_profile(args.profile)
    text = format_partition_table(size, profile, args.mode)
    out.write(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 0


def cmd_run(args, out) -> int:
    q, k, v = (T.load_tensor(p) for p in (args.q, args.k, args.v))
    dt = T.get_dtype()
    q, k, v = (t.astype(dt, copy=False) for t in (q, k, v))
    causal = args.heads_mode == "causal"
    h, e = q.shape[1], q.shape[3]
    window = WindowConfig(_one(args, "W"))
    if args.kernel == "dense":
        res = softmax_attention(q, k, v, causal=causal)
    elif args.kernel == "windowed":
        res = windowed_attention(q, k, v, window, causal=causal)
    else:
        h0 = 0 if args.kernel == "linear" else _sparse_heads(args, h)
        cfg = PartitionConfig(h, h0, window, _feature_map(args, e), causal)
        res = mixed_attention_forward(q, k, v, cfg)
    T.dump_tensor(res, args.output)
    out.write(f"wrote {args.output} shape={res.shape} checksum={bench.checksum(res)}\n")
    return 0


def cmd_calibrate(args, out) -> int:
    b, h, e = _one(args, "B"), _one(args, "H"), _one(args, "E")
    reports = []
    for n, kernel in _bench_grid(args):
        size = perf.WorkloadSize(b, n, h, e, kernel.window or 64)
        rep = bench.measure_kernel(kernel, size, int(args.repeats), int(args.seed),
                                   threads=int(args.threads), mode=args.mode, feature_map=_feature_map(args, e))
        reports.append(rep)
        out.write(f"N={n:<6d} {str(kernel):<14s} {rep.flops:.3e} FLOPs in {rep.seconds:.6f}s\n")
        if args.csv:
            bench.write_csv(args.csv, rep.rows())
    profile = perf.calibrate(reports, run_id=f"seed{args.seed}")
    text = profile.to_json() + "\n"
    out.write(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 0


COMMANDS = {"verify": cmd_verify, "bench": cmd_bench, "partition": cmd_partition,
            "run": cmd_run, "calibrate": cmd_calibrate}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = resolve_args(argv)
        T.set_precision(args.precision)
        limits = threadpool_limits(int(args.threads)) if int(args.threads) > 0 else None
        try:
            return COMMANDS[args.command](args, out)
        finally:
            if limits is not None:
                limits.unregister()
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except T.FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 3
    except (OSError, perf.CalibrationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
