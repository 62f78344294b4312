"""
Tensors, precision and the GFT4 file format
===========================================

Everything in ``mixattn`` works on head-major arrays of shape (B, H, N, E).
This walk-through builds a few tensors, flips the global precision and
round-trips data through the GFT4 binary format.
"""

# %%
import io

import numpy as np

from mixattn import tensor as T

rng = np.random.default_rng(0)
x = T.tensor4(rng.standard_normal((2, 4, 8, 16)))
print("default dtype:", x.dtype, "shape:", x.shape)

# %%
# Sequence-major data (B, N, H, E) converts with a transpose.
seq = T.to_seq_major(x)
print("seq-major shape:", seq.shape, "back:", T.to_head_major(seq).shape)

# %%
# The precision switch is global. Mixing dtypes in one call is an error.
with T.precision("f64"):
    y = T.tensor4(rng.standard_normal((1, 1, 4, 4)))
    print("inside f64 block:", y.dtype)
try:
    T.batched_matmul(x[:, :, :4, :4], y.astype(np.float64))
except T.PrecisionError as exc:
    print("PrecisionError:", exc)

# %%
# GFT4 stores a magic tag, a precision byte, four u32 dims and raw data.
blob = T.dumps_tensor(x)
print("header bytes:", blob[:5], "total size:", len(blob))
assert np.array_equal(T.loads_tensor(blob), x)

# %%
# Truncated files are reported together with the byte offset where parsing stopped.
try:
    T.loads_tensor(blob[:12])
except T.FormatError as exc:
    print("FormatError at offset", exc.offset, "->", exc)

# %%
# Orthogonal Gaussian blocks feed the random feature maps later on.
w = T.gaussian_orthogonal_matrix(32, 16, seed=1)
block = w[:16] / np.linalg.norm(w[:16], axis=1, keepdims=True)
print("row norms:", np.round(np.linalg.norm(w, axis=1)[:4], 3))
print("block orthogonality error:", np.abs(block @ block.T - np.eye(16)).max())
