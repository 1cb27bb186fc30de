import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import cells, dense_attention_loop, member_matrix, route_sum
from sst.attention import (
    AttentionConfig,
    AttentionParams,
    attention_backward,
    dense_attention,
    multi_head_sparse,
    routed_values,
    sparse_attention,
)
from sst.gradcheck import check_sparse_attention
from sst.patterns import PatternSpec

VARIANTS = [
    PatternSpec("grid"),
    PatternSpec("full"),
    PatternSpec("local", r=1),
    PatternSpec("strided", h=2),
    PatternSpec("strided", h=2, phase=1),
    PatternSpec("strided", h=2, phase=2),
    PatternSpec("local_strided", h=2, r=1),
]


def _rand(rng, shape):
    return tuple(rng.standard_normal(shape) for _ in range(3))


def test_dense_single_cell_returns_v():
    rng = np.random.default_rng(1)
    q, k, v = _rand(rng, (3, 1, 1, 1))
    np.testing.assert_array_equal(dense_attention(q, k, v).values, v)


def test_dense_two_cell_examples():
    x = np.zeros((1, 1, 1, 2))
    out = dense_attention(x, x, x, keep_weights=True)
    np.testing.assert_array_equal(out.values, x)
    np.testing.assert_allclose(np.array(out.weights), 0.5)

    ln3 = math.log(3)
    x = np.array([0.0, ln3]).reshape(1, 1, 1, 2)
    e = math.exp(ln3 ** 2)
    np.testing.assert_allclose(dense_attention(x, x, x).values.ravel(), [0.5 * ln3, ln3 * e / (1 + e)], rtol=1e-14)


def test_dense_matches_loop_oracle():
    rng = np.random.default_rng(2)
    q, k, v = _rand(rng, (3, 2, 2, 3))
    np.testing.assert_allclose(dense_attention(q, k, v).values, dense_attention_loop(q, k, v), atol=1e-12)


def test_dense_permutation_equivariance():
    rng = np.random.default_rng(3)
    c, s = 2, 12
    q, k, v = _rand(rng, (c, 1, 1, s))
    perm = rng.permutation(s)
    out = dense_attention(q, k, v).values[..., perm]
    out_p = dense_attention(q[..., perm], k[..., perm], v[..., perm]).values
    np.testing.assert_allclose(out, out_p, atol=1e-12)


def test_singleton_pattern_returns_v():
    rng = np.random.default_rng(4)
    q, k, v = _rand(rng, (2, 1, 3, 3))
    np.testing.assert_array_equal(sparse_attention(q, k, v, PatternSpec("local", r=0)).values, v)


def test_full_pattern_equals_dense():
    rng = np.random.default_rng(5)
    q, k, v = _rand(rng, (4, 2, 3, 3))
    diff = sparse_attention(q, k, v, PatternSpec("full")).values - dense_attention(q, k, v).values
    assert np.abs(diff).max() < 1e-12


def test_grid_hand_example():
    x = np.array([[1.0, 0.0], [0.0, 1.0]]).reshape(1, 1, 2, 2)
    e = math.e
    # diagonal cells see logits (1, 0, 0); off-diagonal cells see all-zero logits over values (1, 0, 1)
    expected = np.array([[e / (e + 2), 2 / 3], [2 / 3, e / (e + 2)]])
    out = sparse_attention(x, x, x, PatternSpec("grid")).values
    np.testing.assert_allclose(out[0, 0], expected, rtol=1e-14)


@pytest.mark.parametrize("spec", VARIANTS, ids=lambda s: f"{s.variant}-{s.phase}")
def test_sparse_matches_masked_dense_oracle(spec):
    rng = np.random.default_rng(6)
    dims = (2, 4, 4)
    q, k, v = _rand(rng, (3,) + dims)
    m = member_matrix(spec.variant, dims, h=spec.h, r=spec.r, phase=spec.phase)
    qf, kf, vf = (a.reshape(3, -1).T for a in (q, k, v))
    logits = np.where(m, qf @ kf.T, -np.inf)
    w = np.exp(logits - logits.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    expected = (w @ vf).T.reshape(q.shape)
    out = sparse_attention(q, k, v, spec, keep_weights=True)
    np.testing.assert_allclose(out.values, expected, atol=1e-12)
    for row in out.weights:
        assert abs(row.sum() - 1) < 1e-6 and np.all(row > 0)


def test_scale_flag_is_noop_for_one_channel():
    rng = np.random.default_rng(7)
    q, k, v = _rand(rng, (1, 2, 3, 3))
    for spec in (PatternSpec("grid"), PatternSpec("full")):
        a = sparse_attention(q, k, v, spec, scale=False).values
        b = sparse_attention(q, k, v, spec, scale=True).values
        np.testing.assert_array_equal(a, b)
    rng = np.random.default_rng(8)
    q, k, v = _rand(rng, (4, 1, 2, 2))
    assert not np.allclose(dense_attention(q, k, v, scale=True).values, dense_attention(q, k, v).values)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(-20, 20))
def test_logit_row_shift_invariance(seed, shift):
    # adding a multiple of q_p to every key shifts row p's logits by a constant only when Q is constant
    rng = np.random.default_rng(seed)
    c, dims = 2, (1, 3, 3)
    q = np.broadcast_to(rng.standard_normal((c, 1, 1, 1)), (c,) + dims).copy()
    k, v = rng.standard_normal((c,) + dims), rng.standard_normal((c,) + dims)
    u = rng.standard_normal((c, 1, 1, 1)) * shift
    a = sparse_attention(q, k, v, PatternSpec("grid")).values
    b = sparse_attention(q, k + u, v, PatternSpec("grid")).values
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        sparse_attention(np.zeros((2, 1, 2, 2)), np.zeros((2, 1, 2, 3)), np.zeros((2, 1, 2, 2)), PatternSpec())
    with pytest.raises(ValueError, match="shape mismatch"):
        dense_attention(np.zeros((1, 1, 2, 2)), np.zeros((2, 1, 2, 2)), np.zeros((1, 1, 2, 2)))


def test_threads_bit_identical():
    rng = np.random.default_rng(9)
    q, k, v = _rand(rng, (4, 3, 5, 5))
    for spec in VARIANTS:
        a = sparse_attention(q, k, v, spec, threads=1).values
        b = sparse_attention(q, k, v, spec, threads=8).values
        assert a.tobytes() == b.tobytes()


# multi-head

def test_one_head_identity_reduces_to_sparse():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((4, 2, 3, 3))
    cfg = AttentionConfig(heads=1, pattern=PatternSpec("grid"))
    out = multi_head_sparse(x, cfg, AttentionParams.identity(4))
    np.testing.assert_allclose(out.values, sparse_attention(x, x, x, PatternSpec("grid")).values, atol=1e-14)


def test_two_heads_concatenate_slices():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((4, 2, 4, 4))
    spec = PatternSpec("strided", h=2)
    out = multi_head_sparse(x, AttentionConfig(heads=2, pattern=spec), AttentionParams.identity(4),
                            keep_weights=True)
    lo, hi = x[:2], x[2:]
    expected = np.concatenate([
        sparse_attention(lo, lo, lo, spec.for_head(0)).values,
        sparse_attention(hi, hi, hi, spec.for_head(1)).values,
    ])
    np.testing.assert_allclose(out.values, expected, atol=1e-14)
    assert [h.pattern.phase for h in out.heads] == [1, 2]


def test_zero_value_projection():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((2, 2, 3, 3))
    p = AttentionParams.identity(2)
    p.wv = np.zeros((2, 2))
    out = multi_head_sparse(x, AttentionConfig(heads=2), p, keep_weights=True)
    np.testing.assert_array_equal(out.values, 0.0)
    for head in out.heads:
        for row in head.weights:
            assert abs(row.sum() - 1) < 1e-12


def test_multi_head_parameter_checks():
    x = np.zeros((4, 1, 2, 2))
    with pytest.raises(ValueError, match="do not divide"):
        multi_head_sparse(x, AttentionConfig(heads=3), AttentionParams.identity(4))
    bad = AttentionParams.identity(4)
    bad.wk = np.eye(3)
    with pytest.raises(ValueError, match="wk"):
        multi_head_sparse(x, AttentionConfig(), bad)


def test_alternate_layers_mode():
    cfg = AttentionConfig(heads=2, pattern=PatternSpec("strided", h=2), alternate_layers=True)
    assert [cfg.head_pattern(h, 0).phase for h in range(2)] == [1, 1]
    assert [cfg.head_pattern(h, 1).phase for h in range(2)] == [2, 2]


# backward

def test_singleton_value_gradient_is_identity():
    rng = np.random.default_rng(13)
    q, k, v = _rand(rng, (2, 1, 2, 2))
    g = rng.standard_normal(q.shape)
    out = sparse_attention(q, k, v, PatternSpec("local", r=0), keep_weights=True)
    gq, gk, gv = attention_backward(g, out.saved)
    np.testing.assert_array_equal(gv, g)
    np.testing.assert_array_equal(gq, 0.0)
    np.testing.assert_array_equal(gk, 0.0)


def test_backward_requires_state():
    rng = np.random.default_rng(14)
    q, k, v = _rand(rng, (2, 1, 2, 2))
    out = sparse_attention(q, k, v, PatternSpec("grid"))
    with pytest.raises(ValueError, match="missing forward state"):
        attention_backward(np.zeros_like(q), out.saved)


def test_grid_gradients_match_finite_differences():
    rng = np.random.default_rng(15)
    q, k, v = _rand(rng, (2, 1, 2, 2))
    errs, _, _ = check_sparse_attention(q, k, v, PatternSpec("grid"), rng=rng)
    assert max(errs) < 1e-4


def test_constant_query_key_gradient():
    rng = np.random.default_rng(16)
    c, dims = 2, (1, 3, 3)
    q = np.broadcast_to(rng.standard_normal((c, 1, 1, 1)), (c,) + dims).copy()
    k, v = rng.standard_normal((c,) + dims), rng.standard_normal((c,) + dims)
    errs, analytic, numeric = check_sparse_attention(q, k, v, PatternSpec("grid"), rng=rng)
    assert errs[1] < 1e-4
    # shifting every key by one vector leaves every logit row shifted by a constant
    np.testing.assert_allclose(analytic[1].reshape(c, -1).sum(axis=1), 0.0, atol=1e-12)


@pytest.mark.parametrize("spec", VARIANTS, ids=lambda s: f"{s.variant}-{s.phase}")
def test_all_variant_gradients(spec):
    rng = np.random.default_rng(17)
    q, k, v = _rand(rng, (2, 2, 3, 3))
    for scale in (False, True):
        errs, _, _ = check_sparse_attention(q, k, v, spec, scale=scale, rng=rng)
        assert max(errs) < 1e-4


# routing with the softmax removed

@pytest.mark.parametrize("layers", [1, 2, 3])
def test_routed_values_enumerate_routes(layers):
    rng = np.random.default_rng(18)
    dims = (2, 2, 2)
    x = rng.standard_normal((3,) + dims)
    got = routed_values(x, PatternSpec("grid"), layers)
    np.testing.assert_allclose(got, route_sum(x, x, member_matrix("grid", dims), layers), rtol=1e-9, atol=1e-9)


def test_routed_mask_values():
    rng = np.random.default_rng(19)
    dims = (2, 2, 3)
    x = rng.standard_normal((2,) + dims)
    mask = (rng.random((1,) + dims) > 0.5).astype(float)
    np.testing.assert_allclose(routed_values(x, PatternSpec("grid"), 3, mask),
                               route_sum(x, mask, member_matrix("grid", dims), 3), rtol=1e-9, atol=1e-9)
