import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sst.costmodel import (
    CostDims,
    attention_macs_per_layer,
    cost_table,
    count_macs,
    count_params,
    format_table,
    pair_count,
    scaling_slope,
    strided_grid_ratio,
    table1_dims,
)
from sst.encoder import EncoderConfig
from sst.patterns import PatternSpec

from oracles import member_matrix

VARIANTS = ["full", "grid", "strided", "local", "local_strided"]


def oracle_macs(variant, dims, channels, h=None, r=7, causal=False, split=False, heads=None):
    """Count attention pairs by brute-force membership, then apply 2*C per pair."""
    if variant == "strided":
        comps = [("strided", 1), ("strided", 2)]
    elif variant == "local_strided":
        comps = [("local", None), ("strided", 1), ("strided", 2)]
    else:
        comps = [(variant, None)]
    counts = [int(member_matrix(v, dims, h=h, r=r, phase=ph, causal=causal).sum()) for v, ph in comps]
    if not split or len(comps) == 1:
        return sum(2 * channels * n for n in counts)
    heads = heads or len(comps)
    return sum(2 * (channels // heads) * counts[k % len(comps)] for k in range(heads))


def test_small_examples():
    d = CostDims(channels=2, T=2, H=2, W=2, layers=1)
    assert count_macs("dense", d).attention == 256
    assert count_macs("grid", d).attention == 128


def test_param_count():
    assert count_params(EncoderConfig(layers=1, ffn_hidden=4), 2) == 36
    assert count_params(EncoderConfig(layers=0), 2) == 0
    a = count_macs("grid", CostDims(T=2, H=5, W=5)).params
    b = count_macs("grid", CostDims(T=7, H=31, W=12)).params
    assert a == b == 3 * (4 * 128 ** 2 + 2 * 128 * 256 + 2 * 128)


def test_projection_and_ffn_separate():
    r = count_macs("grid", CostDims(channels=4, T=2, H=3, W=3, layers=2))
    assert r.projection == 2 * 4 * 16 * 18
    assert r.ffn == 2 * 2 * 4 * 8 * 18
    assert r.total == r.attention + r.projection + r.ffn


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(VARIANTS),
       st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6)),
       st.sampled_from([None, 1, 2, 3]),
       st.integers(0, 3),
       st.booleans())
def test_matches_pair_enumeration(variant, dims, h, r, causal):
    if h is not None and h > max(dims[1], dims[2]):
        return
    d = CostDims(channels=4, T=dims[0], H=dims[1], W=dims[2], layers=1, h=h, r=r, causal=causal)
    assert attention_macs_per_layer(variant, d) == oracle_macs(variant, dims, 4, h, r, causal)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["strided", "local_strided"]),
       st.tuples(st.integers(1, 6), st.integers(2, 6), st.integers(2, 6)),
       st.sampled_from([2, 3, 6]))
def test_split_head_convention(variant, dims, heads):
    d = CostDims(channels=12, T=dims[0], H=dims[1], W=dims[2], layers=1, heads=heads, r=1, split_heads=True)
    assert attention_macs_per_layer(variant, d) == oracle_macs(variant, dims, 12, r=1, split=True, heads=heads)


def test_split_heads_must_divide():
    with pytest.raises(ValueError, match="divide"):
        attention_macs_per_layer("strided", CostDims(channels=5, T=1, H=4, W=4, split_heads=True))


def test_grid_closed_form():
    for dims in [(2, 3, 4), (5, 1, 7), (3, 3, 3)]:
        S = int(np.prod(dims))
        assert pair_count(PatternSpec("grid"), dims) == S * (sum(dims) - 2)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["grid", "local", "full", "strided"]), st.integers(1, 5), st.integers(2, 6), st.integers(2, 6))
def test_monotone_in_size(variant, T, H, W):
    base = CostDims(channels=8, T=T, H=H, W=W, layers=1, h=2)
    bigger = CostDims(channels=8, T=T + 1, H=H, W=W, layers=1, h=2)
    assert attention_macs_per_layer(variant, bigger) >= attention_macs_per_layer(variant, base)
    assert attention_macs_per_layer("grid", base) <= attention_macs_per_layer("full", base)


@pytest.mark.parametrize("variant", ["full", "grid", "strided"])
def test_scaling_slopes(variant):
    assert abs(scaling_slope(variant) - 1.0) < 0.05


def test_doubling_ratios():
    a = CostDims(channels=8, T=3, H=16, W=16, layers=1)
    b = CostDims(channels=8, T=3, H=32, W=32, layers=1)
    assert attention_macs_per_layer("full", b) / attention_macs_per_layer("full", a) == 16
    want = 4 * (3 + 64 - 2) / (3 + 32 - 2)
    assert attention_macs_per_layer("grid", b) / attention_macs_per_layer("grid", a) == pytest.approx(want)


def test_table1_ordering():
    dims = table1_dims()
    assert (dims.H, dims.W) == (59, 59)
    rows = {r.variant: r.attention for r in cost_table(dims)}
    assert rows["grid"] < rows["strided"] < rows["local"] < rows["dense"]
    assert rows["grid"] / rows["dense"] < 0.02
    text = format_table(cost_table(dims))
    assert text.splitlines()[0].split()[0] == "variant"
    assert len(text.splitlines()) == 5


def test_strided_grid_ratio_reported():
    for n in (64, 128):
        ratio = strided_grid_ratio(n, n)
        assert 1.0 < ratio < 3.0
