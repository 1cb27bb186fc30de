"""Dense and sparse spatiotemporal attention with analytic gradients.

Tensors are ``(C, T, H, W)``.  The sparse kernel evaluates one cell at a
time: it asks the pattern generator for the cell's neighbors, gathers
their keys and values, and reduces in neighbor order.  Work is split
across threads by contiguous cell ranges only, so results do not depend
on the thread count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from sst.patterns import PatternSpec, check_dims, pattern_indices, unflat
from sst.tensor import check_video, flat_cells, softmax, softmax_rows, unflatten_cells

THREADS_ENV = "SST_THREADS"


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(threads))


def _chunks(n: int, parts: int) -> list[range]:
    parts = max(1, min(parts, n))
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [range(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def _run_cells(fn, n: int, threads: int) -> None:
    if threads == 1 or n < 2:
        fn(range(n))
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(fn, _chunks(n, threads)))


@dataclass
class HeadWeights:
    """Per-cell attention rows of one head (the object affinity tensor)."""

    pattern: PatternSpec | None
    neighbors: list[np.ndarray]
    weights: list[np.ndarray]


@dataclass
class SavedState:
    q: np.ndarray  # (S, C) flat cells
    k: np.ndarray
    v: np.ndarray
    dims: tuple[int, int, int]
    scale: float
    neighbors: list[np.ndarray]
    weights: list[np.ndarray]


@dataclass
class AttentionOutput:
    values: np.ndarray
    heads: list[HeadWeights] = field(default_factory=list)
    saved: SavedState | None = None

    @property
    def weights(self) -> list[np.ndarray] | None:
        return self.heads[0].weights if self.heads else None

    @property
    def neighbors(self) -> list[np.ndarray] | None:
        return self.heads[0].neighbors if self.heads else None


def _check_qkv(q, k, v):
    q, k, v = (check_video(np.asarray(a, dtype=np.float64), n) for a, n in zip((q, k, v), "QKV"))
    if not (q.shape == k.shape == v.shape):
        raise ValueError(f"shape mismatch: Q{q.shape} K{k.shape} V{v.shape}")
    return q, k, v


def dense_attention(q, k, v, scale: bool = False, keep_weights: bool = False) -> AttentionOutput:
    """``softmax(Q K^T) V`` over all ``S = T*H*W`` cells."""
    q, k, v = _check_qkv(q, k, v)
    dims = q.shape[1:]
    qf, kf, vf = flat_cells(q), flat_cells(k), flat_cells(v)
    logits = qf @ kf.T
    if scale:
        logits = logits / math.sqrt(q.shape[0])
    w = softmax_rows(logits)
    out = AttentionOutput(unflatten_cells(w @ vf, dims))
    if keep_weights:
        everyone = np.arange(w.shape[0])
        out.heads.append(HeadWeights(PatternSpec("full"), [everyone] * w.shape[0], list(w)))
    return out


def _sparse_flat(qf, kf, vf, spec: PatternSpec | None, dims, scale: float,
                 keep: bool, threads: int, normalize: bool = True):
    n, c = qf.shape
    out = np.zeros((n, vf.shape[1]))
    nbrs: list = [None] * n
    wts: list = [None] * n

    def work(cells):
        for i in cells:
            idx = pattern_indices(spec, unflat(i, dims), dims)
            if idx.size == 0:
                raise RuntimeError(f"empty connectivity pattern at cell {i}")
            s = kf[idx] @ qf[i]
            if scale != 1.0:
                s = s * scale
            w = softmax(s) if normalize else s
            out[i] = w @ vf[idx]
            if keep:
                nbrs[i] = idx
                wts[i] = w

    _run_cells(work, n, threads)
    return out, nbrs, wts


def sparse_attention(q, k, v, pattern: PatternSpec, scale: bool = False,
                     keep_weights: bool = False, threads: int | None = None) -> AttentionOutput:
    """``softmax(Q_p K_{I_p}^T) V_{I_p}`` for every cell ``p``.

    With ``keep_weights`` the per-cell weights and the state needed by
    :func:`attention_backward` are kept on the result.
    """
    q, k, v = _check_qkv(q, k, v)
    dims = check_dims(q.shape[1:])
    qf, kf, vf = flat_cells(q), flat_cells(k), flat_cells(v)
    c = 1.0 / math.sqrt(q.shape[0]) if scale else 1.0
    vals, nbrs, wts = _sparse_flat(qf, kf, vf, pattern, dims, c, keep_weights, resolve_threads(threads))
    out = AttentionOutput(unflatten_cells(vals, dims))
    if keep_weights:
        out.heads.append(HeadWeights(pattern, nbrs, wts))
        out.saved = SavedState(qf, kf, vf, dims, c, nbrs, wts)
    return out


def attention_backward(grad_out, saved: SavedState | None):
    """Gradients of :func:`sparse_attention` w.r.t. ``(Q, K, V)``."""
    if saved is None or saved.weights is None or saved.weights[0] is None:
        raise ValueError("missing forward state: run sparse_attention(..., keep_weights=True)")
    g = flat_cells(np.asarray(grad_out, dtype=np.float64))
    if g.shape != saved.v.shape:
        raise ValueError(f"grad_out shape {grad_out.shape} does not match the forward output")
    gq = np.zeros_like(saved.q)
    gk = np.zeros_like(saved.k)
    gv = np.zeros_like(saved.v)
    for i, (idx, w) in enumerate(zip(saved.neighbors, saved.weights)):
        gv[idx] += np.outer(w, g[i])
        dw = saved.v[idx] @ g[i]
        ds = w * (dw - w @ dw) * saved.scale
        gq[i] = ds @ saved.k[idx]
        gk[idx] += np.outer(ds, saved.q[i])
    return tuple(unflatten_cells(a, saved.dims) for a in (gq, gk, gv))


@dataclass
class AttentionConfig:
    heads: int = 1
    pattern: PatternSpec = field(default_factory=PatternSpec)
    scale_softmax: bool = False
    # pick one pattern component per layer instead of per head
    alternate_layers: bool = False

    def head_pattern(self, head: int, layer: int = 0) -> PatternSpec:
        if self.alternate_layers:
            return self.pattern.for_layer(layer)
        return self.pattern.for_head(head)


@dataclass
class AttentionParams:
    """Projections, each ``(C_in, C_out)``; a cell row vector times ``w``."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    @classmethod
    def identity(cls, channels: int) -> "AttentionParams":
        eye = np.eye(channels)
        return cls(eye.copy(), eye.copy(), eye.copy(), eye.copy())


def multi_head_sparse(x, cfg: AttentionConfig, params: AttentionParams, layer: int = 0,
                      keep_weights: bool = False, threads: int | None = None) -> AttentionOutput:
    """Project, split into heads, attend per head, concatenate, project out."""
    x = check_video(np.asarray(x, dtype=np.float64), "x")
    c = x.shape[0]
    dims = check_dims(x.shape[1:])
    if cfg.heads < 1 or c % cfg.heads:
        raise ValueError(f"{cfg.heads} heads do not divide {c} channels")
    for name in ("wq", "wk", "wv", "wo"):
        if getattr(params, name).shape != (c, c):
            raise ValueError(f"{name} must be ({c}, {c}), got {getattr(params, name).shape}")
    cph = c // cfg.heads
    xf = flat_cells(x)
    qf, kf, vf = xf @ params.wq, xf @ params.wk, xf @ params.wv
    scale = 1.0 / math.sqrt(cph) if cfg.scale_softmax else 1.0
    threads = resolve_threads(threads)
    cat = np.zeros_like(vf)
    out = AttentionOutput(x)
    for h in range(cfg.heads):
        sl = slice(h * cph, (h + 1) * cph)
        spec = cfg.head_pattern(h, layer)
        vals, nbrs, wts = _sparse_flat(
            np.ascontiguousarray(qf[:, sl]), np.ascontiguousarray(kf[:, sl]),
            np.ascontiguousarray(vf[:, sl]), spec, dims, scale, keep_weights, threads,
        )
        cat[:, sl] = vals
        if keep_weights:
            out.heads.append(HeadWeights(spec, nbrs, wts))
    out.values = unflatten_cells(cat @ params.wo, dims)
    return out


def routed_values(features, pattern: PatternSpec, layers: int, values=None) -> np.ndarray:
    """Compose ``layers`` sparse attention passes with the softmax removed.

    Queries and keys stay ``features`` while values are fed forward from
    the previous pass, starting from ``values`` (default ``features``).
    Each output cell then sums ``(f_p . f_q1)(f_q1 . f_q2)... v_qL`` over
    every route ``p -> q1 -> ... -> qL`` through the pattern; passing mask
    channels as ``values`` routes labels along those paths.
    """
    f = check_video(np.asarray(features, dtype=np.float64), "features")
    dims = check_dims(f.shape[1:])
    v = f if values is None else check_video(np.asarray(values, dtype=np.float64), "values")
    if v.shape[1:] != f.shape[1:]:
        raise ValueError("values must share the features' (T, H, W) extent")
    ff, vf = flat_cells(f), flat_cells(v)
    for _ in range(layers):
        vf, _, _ = _sparse_flat(ff, ff, vf, pattern, dims, 1.0, False, 1, normalize=False)
    return unflatten_cells(vf, dims)
