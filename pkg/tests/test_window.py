import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixattn import tensor as T
from mixattn.reference import softmax_attention
from mixattn.window import (
    WindowConfig,
    banded_scores,
    banded_weighted_sum,
    windowed_attention,
    windowed_softmax,
)


def qkv(rng, shape):
    return tuple(T.tensor4(rng.standard_normal(shape)) for _ in range(3))


def dense_scores(q, k):
    return np.einsum("bhie,bhje->bhij", q.astype(np.float64), k.astype(np.float64)) / np.sqrt(q.shape[3])


@pytest.mark.parametrize("window, vw", [(64, 64), (16, 8), (96, 32)])
def test_window_config_valid(window, vw):
    WindowConfig(window, vw)


@pytest.mark.parametrize("window, vw", [(0, 64), (100, 64), (64, 12), (8192, 64)])
def test_window_config_invalid(window, vw):
    with pytest.raises(ValueError):
        WindowConfig(window, vw)


def test_first_row_single_live_entry(rng):
    q, k, _ = qkv(rng, (1, 2, 10, 8))
    s = banded_scores(q, k, WindowConfig(64))
    assert s.live_count()[0] == 1
    assert s.data[0, 1, 0, 63] == pytest.approx(float(q[0, 1, 0] @ k[0, 1, 0]) / np.sqrt(8), rel=1e-5)
    assert not s.data[0, :, 0, :63].any()


def test_live_counts(rng):
    q, k, _ = qkv(rng, (1, 1, 100, 4))
    s = banded_scores(q, k, WindowConfig(16, 8))
    np.testing.assert_array_equal(s.live_count(), np.minimum(np.arange(100) + 1, 16))


def test_wide_window_band_is_lower_triangle(rng):
    q, k, _ = qkv(rng, (2, 2, 50, 8))
    s = banded_scores(q, k, WindowConfig(64))
    want = np.tril(dense_scores(q, k))
    np.testing.assert_allclose(s.to_dense(), want, atol=1e-5)


def test_orthonormal_rows():
    e = 8
    q = T.tensor4(np.eye(e)[None, None])
    s = banded_scores(q, q, WindowConfig(8, 8))
    dense = s.to_dense()
    np.testing.assert_allclose(np.diag(dense[0, 0]), 1 / np.sqrt(e), rtol=1e-6)
    assert np.abs(dense[0, 0] - np.diag(np.diag(dense[0, 0]))).max() == 0


def test_softmax_single_and_pair():
    q = T.tensor4(np.zeros((1, 1, 2, 4)))
    p = windowed_softmax(banded_scores(q, q, WindowConfig(8, 8)), 8)
    assert p.data[0, 0, 0, 7] == 1.0
    np.testing.assert_array_equal(p.data[0, 0, 1, 6:], [0.5, 0.5])


def test_softmax_row_vs_scalar_oracle(rng):
    with T.precision("f64"):
        q, k, _ = qkv(rng, (1, 1, 64, 16))
    q, k = q.astype(np.float32), k.astype(np.float32)
    s = banded_scores(q, k, WindowConfig(64))
    p = windowed_softmax(s)
    row = s.data[0, 0, 63].astype(np.float64)
    ex = np.array([np.exp(x) for x in row])
    assert np.max(np.abs(p.data[0, 0, 63] - ex / ex.sum())) < 1e-6


def test_sentinels_stay_zero(rng):
    q, k, _ = qkv(rng, (1, 1, 20, 4))
    p = windowed_softmax(banded_scores(q, k, WindowConfig(64)))
    assert not p.data[..., ~p.live_mask()].any()
    np.testing.assert_allclose(p.data.sum(-1), 1, atol=1e-6)


def test_weighted_sum_one_hot_self(rng):
    _, k, v = qkv(rng, (1, 2, 30, 4))
    s = banded_scores(k, k, WindowConfig(16, 8))
    onehot = np.zeros_like(s.data)
    onehot[..., 15] = 1
    np.testing.assert_array_equal(banded_weighted_sum(type(s)(onehot, s.back, s.lo, s.hi), v), v)


def test_weighted_sum_uniform_is_windowed_mean(rng):
    with T.precision("f64"):
        q, _, v = qkv(rng, (1, 1, 40, 4))
    s = banded_scores(q, q, WindowConfig(8, 8))
    uni = np.where(s.live_mask(), 1.0 / s.live_count()[:, None], 0.0)[None, None]
    out = banded_weighted_sum(type(s)(uni, s.back, s.lo, s.hi), v)
    for n in range(40):
        np.testing.assert_allclose(out[0, 0, n], v[0, 0, max(0, n - 7) : n + 1].mean(0), atol=1e-12)


def test_weighted_sum_vs_dense(rng):
    with T.precision("f64"):
        q, k, v = qkv(rng, (2, 2, 60, 8))
        p = windowed_softmax(banded_scores(q, k, WindowConfig(64)))
        np.testing.assert_allclose(banded_weighted_sum(p, v), p.to_dense() @ v, atol=1e-12)


def test_window_covers_sequence_equals_causal_oracle(rng):
    q, k, v = qkv(rng, (2, 3, 77, 16))
    got = windowed_attention(q, k, v, WindowConfig.covering(77))
    assert np.max(np.abs(got - softmax_attention(q, k, v, causal=True))) <= 1e-5


def test_single_token(rng):
    q, k, v = qkv(rng, (1, 1, 1, 8))
    np.testing.assert_allclose(windowed_attention(q, k, v, WindowConfig(64)), v, rtol=1e-6)


def test_band_locality_row_100(rng):
    q, k, v = qkv(rng, (1, 1, 128, 64))
    base = windowed_attention(q, k, v, WindowConfig(64))
    v2 = v.copy()
    v2[:, :, :37] = rng.standard_normal((1, 1, 37, 64)) * 100
    out = windowed_attention(q, k, v2, WindowConfig(64))
    np.testing.assert_array_equal(out[0, 0, 100], base[0, 0, 100])
    v3 = v.copy()
    v3[:, :, 37] += 1
    assert not np.array_equal(windowed_attention(q, k, v3, WindowConfig(64))[0, 0, 100], base[0, 0, 100])


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 200), st.sampled_from([8, 16, 64]), st.integers(0, 2**32 - 1))
def test_locality_property(n, w, seed):
    rng = np.random.default_rng(seed)
    q, k, v = qkv(rng, (1, 1, n, 4))
    cfg = WindowConfig(w, 8)
    base = windowed_attention(q, k, v, cfg)
    row = int(rng.integers(n))
    lo = max(0, row - w + 1)
    outside = np.ones(n, dtype=bool)
    outside[lo : row + 1] = False
    k2, v2 = k.copy(), v.copy()
    k2[:, :, outside] += 3
    v2[:, :, outside] -= 5
    q2 = q.copy()
    q2[:, :, np.arange(n) != row] *= 2
    np.testing.assert_array_equal(windowed_attention(q2, k2, v2, cfg)[0, 0, row], base[0, 0, row])


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 256), st.integers(0, 2**32 - 1))
def test_oracle_equivalence_f64(n, seed):
    rng = np.random.default_rng(seed)
    with T.precision("f64"):
        q, k, v = qkv(rng, (1, 2, n, 16))
        got = windowed_attention(q, k, v, WindowConfig.covering(n))
        want = softmax_attention(q, k, v, causal=True)
    assert np.max(np.abs(got - want)) <= 1e-11


def test_bidirectional_window_geometry(rng):
    with T.precision("f64"):
        q, k, v = qkv(rng, (1, 1, 40, 4))
        out = windowed_attention(q, k, v, WindowConfig(16, 8), causal=False)
        n = 20
        s = q[0, 0, n] @ k[0, 0, 12:29].T / 2
        p = np.exp(s - s.max())
        np.testing.assert_allclose(out[0, 0, n], (p / p.sum()) @ v[0, 0, 12:29], atol=1e-12)


def test_bidirectional_covering_equals_full_attention(rng):
    q, k, v = qkv(rng, (1, 2, 50, 8))
    got = windowed_attention(q, k, v, WindowConfig(128), causal=False)
    assert np.max(np.abs(got - softmax_attention(q, k, v))) <= 1e-5


def test_mismatched_shapes(rng):
    q, k, _ = qkv(rng, (1, 1, 8, 4))
    with pytest.raises(T.ShapeError):
        windowed_attention(q, k, T.tensor4(np.ones((1, 1, 9, 4))), WindowConfig(8, 8))
