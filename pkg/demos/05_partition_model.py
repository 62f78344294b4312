"""
Choosing the head split from a throughput model
===============================================

Each path's latency is its FLOP count over the throughput of the unit that
runs it. Both units work in parallel, so the layer takes as long as the
slower one, and the best ``h0`` minimises that maximum.
"""

# %%
from mixattn import perf
from mixattn.cli import format_partition_table

size = perf.WorkloadSize(B=4, N=4096, H=16, E=64, W=64)
print("linear FLOPs, 13 heads:", perf.flops_linear(size, 13))
print("sparse FLOPs, 3 heads (exact):", perf.flops_sparse(size, 3, "exact"))

# %%
print(format_partition_table(size, perf.GAUDI_PAPER, "paper"))

# %%
# A slower matrix unit pushes work back to the sparse path.
for scale in (1.0, 0.1, 0.01):
    prof = perf.GAUDI_PAPER.scaled(1.0, scale)
    h0, est = perf.optimal_partition(size, prof, "exact")
    print(f"perf1 x{scale:<5}: h0={h0:2d} latency={est.latency:.3e}s ({est.bottleneck})")
