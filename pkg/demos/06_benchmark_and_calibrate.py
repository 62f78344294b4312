"""
Benchmarking kernels and calibrating a profile
==============================================

``measure_kernel`` times a kernel after a warm-up run. Feeding the timings of
one sparse-path and one linear-path kernel to ``calibrate`` yields a
throughput profile for this machine, which the partition model can use.
"""

# %%
import tempfile
from pathlib import Path

from mixattn import bench, perf

reports = []
for n in (256, 512, 1024):
    size = perf.WorkloadSize(B=1, N=n, H=4, E=64, W=64)
    for name in ("windowed:64", "linear"):
        rep = bench.measure_kernel(bench.KernelSpec.parse(name), size, repeats=3)
        reports.append(rep)
        print(f"N={n:5d} {name:12s} median {rep.median * 1e3:7.2f} ms  {rep.flops_per_sec:.2e} FLOP/s")

# %%
# Rows append to a CSV; the header is written once.
csv_path = Path(tempfile.mkdtemp()) / "bench.csv"
for rep in reports:
    bench.write_csv(csv_path, rep.rows())
print(csv_path.read_text().splitlines()[0])

# %%
profile = perf.calibrate(bench.reports_from_rows(bench.read_csv(csv_path)), min_span=4.0)
print(profile.to_json())
h0, est = perf.optimal_partition(perf.WorkloadSize(4, 4096, 16, 64, 64), profile)
print(f"suggested h0 on this machine: {h0} ({est.bottleneck})")
