"""Structural multiply-accumulate and parameter counts.

Convention: only multiply-accumulates count (softmax exponentials and
normalization arithmetic are free).  Attending from ``p`` to one
neighbor over ``c`` channels costs ``2c`` MACs: one ``c``-long dot
product for the logit and one ``c``-long accumulate for the value sum.

Multi-pattern variants (strided, local_strided) are charged one of two
ways.  By default every component pattern is a full-width attention
pass over all ``C`` channels.  With ``split_heads`` the components are
assigned round-robin to heads of ``C / heads`` channels each, which is
what :func:`sst.attention.multi_head_sparse` actually evaluates.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from sst.encoder import EncoderConfig
from sst.patterns import PatternSpec

VARIANT_NAMES = {"dense": "full", "naive": "full"}
TABLE1_VARIANTS = ("grid", "strided", "local", "dense")


@dataclass(frozen=True)
class CostDims:
    channels: int = 128
    T: int = 3
    H: int = 59
    W: int = 59
    layers: int = 3
    heads: int | None = None  # None -> one head per pattern component
    h: int | None = None
    r: int = 7
    ffn_hidden: int | None = None  # None -> 2 * channels
    causal: bool = False
    split_heads: bool = False

    @property
    def cells(self) -> int:
        return self.T * self.H * self.W

    @property
    def hidden(self) -> int:
        return self.ffn_hidden if self.ffn_hidden is not None else 2 * self.channels


@dataclass
class CostReport:
    variant: str
    dims: CostDims
    attention: int
    projection: int
    ffn: int
    params: int
    total: int = field(init=False)

    def __post_init__(self):
        self.total = self.attention + self.projection + self.ffn

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = asdict(self.dims)
        return d


def as_spec(variant, dims: CostDims) -> PatternSpec:
    if isinstance(variant, PatternSpec):
        return variant
    return PatternSpec(VARIANT_NAMES.get(variant, variant), h=dims.h, r=dims.r, causal=dims.causal)


def _axis_counts(spec: PatternSpec, dims: tuple[int, int, int]) -> list[np.ndarray]:
    """Per-axis neighbor counts whose outer product is ``|I_p|``."""
    T, H, W = dims
    t = np.arange(T)
    tcount = t + 1 if spec.causal else np.full(T, T)
    if spec.variant == "full":
        return [tcount, np.full(H, H), np.full(W, W)]
    if spec.variant == "local":
        def win(n):
            a = np.arange(n)
            return np.minimum(a + spec.r, n - 1) - np.maximum(a - spec.r, 0) + 1
        return [tcount, win(H), win(W)]
    ht, h = spec.kernel(dims)
    out = []
    for axis, (n, k) in enumerate(zip(dims, (ht, h, h))):
        a = np.arange(n)
        if spec.phase == 1 and spec.anchored:
            c = np.minimum(k, n - a)
            if axis == 0 and spec.causal:
                c = np.ones(n, dtype=np.int64)
        elif spec.phase == 1:
            start = a // k * k
            c = a - start + 1 if (axis == 0 and spec.causal) else np.minimum(start + k, n) - start
        else:
            c = a // k + 1 if (axis == 0 and spec.causal) else (n - 1 - a % k) // k + 1
        out.append(c)
    return out


def pair_count(spec: PatternSpec, dims) -> int:
    """``sum_p |I_p|`` for a single-component pattern, in closed form."""
    T, H, W = dims
    if spec.variant == "grid":
        if spec.causal:
            return H * W * sum(t + H + W - 1 for t in range(T))
        return T * H * W * (T + H + W - 2)
    ct, cy, cx = _axis_counts(spec, dims)
    return int(ct.sum()) * int(cy.sum()) * int(cx.sum())


def attention_macs_per_layer(variant, dims: CostDims) -> int:
    spec = as_spec(variant, dims)
    grid_dims = (dims.T, dims.H, dims.W)
    comps = spec.components()
    if not dims.split_heads or len(comps) == 1:
        return sum(2 * dims.channels * pair_count(c, grid_dims) for c in comps)
    heads = dims.heads or len(comps)
    if dims.channels % heads:
        raise ValueError(f"{heads} heads do not divide {dims.channels} channels")
    cph = dims.channels // heads
    return sum(2 * cph * pair_count(spec.for_head(k), grid_dims) for k in range(heads))


def count_params(cfg: EncoderConfig | None, channels: int) -> int:
    """Q/K/V/output projections, feedforward and norm gains; no biases."""
    if cfg is None or cfg.layers == 0:
        return 0
    f = cfg.hidden(channels)
    return cfg.layers * (4 * channels * channels + 2 * channels * f + 2 * channels)


def count_macs(variant, dims: CostDims) -> CostReport:
    s = dims.cells
    c = dims.channels
    name = variant.variant if isinstance(variant, PatternSpec) else variant
    return CostReport(
        variant=name,
        dims=dims,
        attention=dims.layers * attention_macs_per_layer(variant, dims),
        projection=dims.layers * 4 * c * c * s,
        ffn=dims.layers * 2 * c * dims.hidden * s,
        params=count_params(EncoderConfig(layers=dims.layers, ffn_hidden=dims.hidden), c),
    )


def table1_dims(stride: int = 8, resolution: int = 465) -> CostDims:
    """Three-frame buffer, 128 channels, 3 layers, features at ``resolution / stride``."""
    side = math.ceil(resolution / stride)
    return CostDims(channels=128, T=3, H=side, W=side, layers=3)


def cost_table(dims: CostDims, variants=TABLE1_VARIANTS) -> list[CostReport]:
    return [count_macs(v, dims) for v in variants]


def asymptotic_macs(variant: str, dims: CostDims) -> float:
    """Leading-order attention cost the complexity claims refer to."""
    c, s = dims.channels, dims.cells
    v = VARIANT_NAMES.get(variant, variant)
    if v == "full":
        return c * s * s
    if v == "grid":
        return c * (dims.T + dims.H + dims.W) * s
    if v == "strided":
        return c * s ** 1.5
    raise ValueError(f"no asymptotic form for {variant!r}")


def scaling_slope(variant: str, sizes=(8, 16, 32, 64, 128), channels: int = 32) -> float:
    """Log-log slope of counted against asymptotic MACs over cubes ``n^3``.

    A slope of 1 means the counter scales exactly as the complexity
    formula.  The strided kernel follows ``h = floor(sqrt(n))``.
    """
    measured, model = [], []
    for n in sizes:
        d = CostDims(channels=channels, T=n, H=n, W=n, layers=1)
        measured.append(attention_macs_per_layer(variant, d))
        model.append(asymptotic_macs(variant, d))
    return float(np.polyfit(np.log(model), np.log(measured), 1)[0])


def strided_grid_ratio(H: int, W: int, T: int = 8, channels: int = 128, split_heads: bool = True) -> float:
    d = CostDims(channels=channels, T=T, H=H, W=W, layers=1, split_heads=split_heads)
    return attention_macs_per_layer("strided", d) / attention_macs_per_layer("grid", d)


def format_table(reports: list[CostReport]) -> str:
    dense = next((r.attention for r in reports if r.variant in ("dense", "full", "naive")), None)
    rows = [("variant", "attention_MACs", "total_MACs", "ratio_to_dense", "params")]
    for r in reports:
        ratio = f"{r.attention / dense:.6f}" if dense else "-"
        rows.append((r.variant, str(r.attention), str(r.total), ratio, str(r.params)))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths)))
             for row in rows]
    return "\n".join(line.rstrip() for line in lines) + "\n"


def with_dims(dims: CostDims, **kw) -> CostDims:
    return replace(dims, **kw)
