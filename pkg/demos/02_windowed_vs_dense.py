"""
Sliding-window attention against the dense oracle
=================================================

Windowed attention only looks at the last ``W`` keys (a multiple of 64) of each query. When the
window covers the whole sequence it must agree with exact softmax attention,
and for short windows it does far less work.
"""

# %%
import time

import numpy as np

from mixattn import tensor as T
from mixattn.reference import softmax_attention
from mixattn.window import WindowConfig, banded_scores, windowed_attention

rng = np.random.default_rng(1)
q, k, v = (T.tensor4(rng.standard_normal((1, 2, 200, 32))) for _ in range(3))

# %%
# A window covering the sequence reproduces the causal oracle.
full = windowed_attention(q, k, v, WindowConfig.covering(200))
print("max |windowed - dense|:", np.abs(full - softmax_attention(q, k, v, causal=True)).max())

# %%
# Scores live in a band: one row per query, one column per offset.
band = banded_scores(q, k, WindowConfig(64))
print("band shape:", band.data.shape, "live keys in row 0 / row 199:",
      band.live_count()[0], band.live_count()[199])

# %%
# Bidirectional mode takes W/2 keys on each side plus the query itself.
bi = windowed_attention(q, k, v, WindowConfig(64), causal=False)
print("bidirectional output:", bi.shape)

# %%
# Cost grows with N*W instead of N^2.
for n in (1024, 4096):
    q, k, v = (T.tensor4(rng.standard_normal((1, 4, n, 64))) for _ in range(3))
    t0 = time.perf_counter(); softmax_attention(q, k, v, causal=True); dense = time.perf_counter() - t0
    t0 = time.perf_counter(); windowed_attention(q, k, v, WindowConfig(64)); win = time.perf_counter() - t0
    print(f"N={n}: dense {dense:.3f}s windowed {win:.3f}s ({dense / win:.1f}x)")
