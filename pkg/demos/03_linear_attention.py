"""
Linear attention with feature maps
==================================

Replacing ``exp(q.k)`` by ``phi(q).phi(k)`` lets attention be computed in
time linear in N. Positive orthogonal random features give an unbiased
estimate of the softmax kernel; ``elu + 1`` is a cheap deterministic map.
"""

# %%
import numpy as np

from mixattn import tensor as T
from mixattn.linear import (
    FeatureMapSpec,
    apply_feature_map,
    causal_linear_cumsum,
    causal_linear_recurrent,
    linear_attention_noncausal,
    outer_product_broadcast,
)

rng = np.random.default_rng(2)

# %%
# The random-feature estimate of exp(q.k) sharpens as m grows.
T.set_precision("f64")
e = 16
q, k = rng.standard_normal(e) * 0.3, rng.standard_normal(e) * 0.3
x = T.tensor4(np.stack([q, k])[None, None] * e ** 0.25)
for m in (16, 256, 4096):
    phi = apply_feature_map(x, FeatureMapSpec.positive_orf(m, e, seed=3))[0, 0]
    print(f"m={m:5d} estimate {phi[0] @ phi[1]:.4f} exact {np.exp(q @ k):.4f}")
T.set_precision("f32")

# %%
# Causal linear attention has two evaluation orders: a running state and a prefix sum.
q, k, v = (T.tensor4(rng.standard_normal((1, 2, 64, 16))) for _ in range(3))
spec = FeatureMapSpec.elu_plus_one()
qp, kp = apply_feature_map(q, spec), apply_feature_map(k, spec)
rec, cum = causal_linear_recurrent(qp, kp, v), causal_linear_cumsum(qp, kp, v)
print("recurrent vs cumsum:", np.abs(rec - cum).max())

# %%
# Row i of the causal output equals non-causal attention over the first i+1 tokens.
i = 40
prefix = linear_attention_noncausal(qp[:, :, : i + 1], kp[:, :, : i + 1], v[:, :, : i + 1])
print("prefix row match:", np.abs(prefix[:, :, i] - rec[:, :, i]).max())

# %%
# The vectorised outer product is bit-for-bit the plain product.
a, b = rng.standard_normal(64).astype(np.float32), rng.standard_normal(64).astype(np.float32)
print("bitwise equal:", np.array_equal(outer_product_broadcast(a, b), a[:, None] * b[None, :]))
