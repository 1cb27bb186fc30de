"""Stacked sparse-attention encoder and object affinity extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sst.attention import AttentionConfig, AttentionParams, HeadWeights, multi_head_sparse
from sst.patterns import check_dims, flat_index
from sst.tensor import check_video, flat_cells, unflatten_cells

FRAME_STATUS = ("reference", "predicted", "unknown")


@dataclass
class EncoderConfig:
    layers: int = 3
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    ffn_hidden: int | None = None  # None -> 2 * C
    eps: float = 1e-5
    tau: int = 3
    # also carry the previous layer's affinity along each attention edge
    route_affinity: bool = True

    def __post_init__(self):
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")

    def hidden(self, channels: int) -> int:
        return self.ffn_hidden if self.ffn_hidden is not None else 2 * channels


@dataclass
class LayerParams:
    attn: AttentionParams
    w1: np.ndarray  # (C, F)
    w2: np.ndarray  # (F, C)
    g1: np.ndarray  # (C,) norm gain after attention
    g2: np.ndarray  # (C,) norm gain after the feedforward


def init_params(cfg: EncoderConfig, channels: int, seed: int = 0) -> list[LayerParams]:
    """Seeded uniform ``[-1/sqrt(C), 1/sqrt(C)]`` weights, unit norm gains."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(channels)
    f = cfg.hidden(channels)

    def u(*shape):
        return rng.uniform(-bound, bound, size=shape)

    return [
        LayerParams(
            AttentionParams(u(channels, channels), u(channels, channels), u(channels, channels), u(channels, channels)),
            u(channels, f), u(f, channels), np.ones(channels), np.ones(channels),
        )
        for _ in range(cfg.layers)
    ]


def routing_params(cfg: EncoderConfig, channels: int, sharpness: float = 30.0) -> list[LayerParams]:
    """Hand-set weights that turn the encoder into a label router.

    Every head's query and key projections copy the first ``C / heads``
    input channels scaled by ``sqrt(sharpness)``, so same-feature cells
    get logit ``sharpness`` and orthogonal ones 0.  Value and output
    projections are identities and the feedforward is switched off.
    """
    heads = cfg.attention.heads
    if channels % heads:
        raise ValueError(f"{heads} heads do not divide {channels} channels")
    cph = channels // heads
    proj = np.zeros((channels, channels))
    for h in range(heads):
        proj[np.arange(cph), h * cph + np.arange(cph)] = np.sqrt(sharpness)
    f = cfg.hidden(channels)
    eye = np.eye(channels)
    return [
        LayerParams(AttentionParams(proj.copy(), proj.copy(), eye.copy(), eye.copy()),
                    np.zeros((channels, f)), np.zeros((f, channels)), np.ones(channels), np.ones(channels))
        for _ in range(cfg.layers)
    ]


def layer_norm(xf: np.ndarray, gain: np.ndarray, eps: float) -> np.ndarray:
    mu = xf.mean(axis=1, keepdims=True)
    var = ((xf - mu) ** 2).mean(axis=1, keepdims=True)
    return (xf - mu) / np.sqrt(var + eps) * gain


def encoder_layer(x, cfg: EncoderConfig, params: LayerParams, layer: int = 0,
                  keep_weights: bool = True, threads: int | None = None):
    """Post-norm residual block: ``y = N(z + FFN(z))`` with ``z = N(x + MHA(x))``.

    Returns ``(y, heads)`` where ``heads`` holds per-head attention rows
    (empty unless ``keep_weights``).
    """
    x = check_video(np.asarray(x, dtype=np.float64), "x")
    c = x.shape[0]
    if params.w1.shape != (c, params.w1.shape[1]) or params.w2.shape != (params.w1.shape[1], c):
        raise ValueError(f"feedforward weights {params.w1.shape}/{params.w2.shape} do not fit {c} channels")
    if params.g1.shape != (c,) or params.g2.shape != (c,):
        raise ValueError("norm gains must have one entry per channel")
    att = multi_head_sparse(x, cfg.attention, params.attn, layer=layer,
                            keep_weights=keep_weights, threads=threads)
    xf = flat_cells(x)
    z = layer_norm(xf + flat_cells(att.values), params.g1, cfg.eps)
    ff = np.maximum(z @ params.w1, 0.0) @ params.w2
    y = layer_norm(z + ff, params.g2, cfg.eps)
    return unflatten_cells(y, x.shape[1:]), att.heads


@dataclass
class ObjectMaskSequence:
    """Integer labels per buffered frame; 0 is background.

    ``status`` marks each frame ``reference``, ``predicted`` or
    ``unknown``; labels of unknown frames are ignored.
    """

    labels: np.ndarray  # (tau, H, W)
    objects: int
    status: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 3:
            raise ValueError("labels must have shape (T, H, W)")
        if not self.status:
            self.status = ["reference"] * self.labels.shape[0]
        if len(self.status) != self.labels.shape[0]:
            raise ValueError("one status entry per frame is required")
        if any(s not in FRAME_STATUS for s in self.status):
            raise ValueError(f"frame status must be one of {FRAME_STATUS}")
        if self.objects < 1:
            raise ValueError("at least one generalized object (background) is required")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.objects):
            raise ValueError(f"labels must lie in [0, {self.objects - 1}]")
        if not any(s != "unknown" for s in self.status):
            raise ValueError("at least one frame must carry a known mask")

    @property
    def known(self) -> np.ndarray:
        return np.array([s != "unknown" for s in self.status])

    def onehot(self) -> np.ndarray:
        """``(S, O)`` indicator over flat cells; unknown frames are all zero."""
        flat = self.labels.reshape(-1)
        out = np.zeros((flat.size, self.objects))
        out[np.arange(flat.size), flat] = 1.0
        frame_cells = self.labels[0].size
        out *= np.repeat(self.known, frame_cells)[:, None]
        return out


def object_affinity(head: HeadWeights, masks: ObjectMaskSequence, p, o: int) -> float:
    """Largest weight ``p`` puts on an earlier-frame cell of object ``o``, else 0."""
    dims = check_dims(masks.labels.shape)
    i = flat_index(p, dims)
    idx, w = head.neighbors[i], head.weights[i]
    if idx is None:
        raise ValueError("attention rows were not retained for this head")
    hw = dims[1] * dims[2]
    t_q = idx // hw
    labels = masks.labels.reshape(-1)[idx]
    keep = (t_q < p[0]) & (labels == o) & masks.known[t_q]
    return float(w[keep].max()) if keep.any() else 0.0


def layer_affinity(heads: list[HeadWeights], masks: ObjectMaskSequence,
                   previous: np.ndarray | None = None) -> np.ndarray:
    """Affinity of every cell to every object for one layer, shape ``(O, S)``.

    The direct term is :func:`object_affinity`.  When ``previous`` (the
    prior layer's ``(O, S)`` affinity) is given, each edge ``p -> q`` with
    ``q`` no later than ``p`` also offers ``w_pq * previous[:, q]``, so
    labels travel along multi-hop routes.  The maximum is taken over
    both terms and over heads.
    """
    dims = masks.labels.shape
    hw = dims[1] * dims[2]
    onehot = masks.onehot()
    s = onehot.shape[0]
    t_cell = np.arange(s) // hw
    prev = None if previous is None else np.ascontiguousarray(previous.T)
    out = np.zeros((s, masks.objects))
    for head in heads:
        for i in range(s):
            idx, w = head.neighbors[i], head.weights[i]
            t_q = t_cell[idx]
            earlier = t_q < t_cell[i]
            if earlier.any():
                np.maximum(out[i], (w[earlier, None] * onehot[idx[earlier]]).max(axis=0), out=out[i])
            if prev is not None:
                ok = t_q <= t_cell[i]
                np.maximum(out[i], (w[ok, None] * prev[idx[ok]]).max(axis=0), out=out[i])
    return out.T


MATCH_KINDS = ("euclidean", "ncc")


def edge_matching(x, head: HeadWeights, kind: str = "euclidean") -> list[np.ndarray]:
    """Per-edge match scores aligned with ``head.neighbors``, built from dot products.

    ``euclidean`` is ``sqrt(|a|^2 + |b|^2 - 2 a.b)``; ``ncc`` is the dot
    product of the mean-centred, unit-normalised channel vectors (0 for a
    constant vector).  Optional auxiliary features; nothing downstream
    requires them.
    """
    if kind not in MATCH_KINDS:
        raise ValueError(f"unknown matching kind {kind!r}; choose from {MATCH_KINDS}")
    f = flat_cells(check_video(np.asarray(x, dtype=np.float64), "x"))
    if kind == "ncc":
        f = f - f.mean(axis=1, keepdims=True)
        norm = np.linalg.norm(f, axis=1, keepdims=True)
        f = np.divide(f, norm, out=np.zeros_like(f), where=norm > 0)
    sq = np.einsum("sc,sc->s", f, f)
    out = []
    for i, idx in enumerate(head.neighbors):
        dots = f[idx] @ f[i]
        out.append(dots if kind == "ncc" else np.sqrt(np.maximum(sq[i] + sq[idx] - 2 * dots, 0.0)))
    return out


def object_distance(x, head: HeadWeights, masks: ObjectMaskSequence) -> np.ndarray:
    """Smallest feature distance from each cell to an earlier-frame cell of
    each object within its pattern, shape ``(O, S)``; ``inf`` if none."""
    dims = masks.labels.shape
    hw = dims[1] * dims[2]
    labels = masks.labels.reshape(-1)
    known = masks.known
    dist = edge_matching(x, head, "euclidean")
    out = np.full((masks.objects, labels.size), np.inf)
    for i, idx in enumerate(head.neighbors):
        t_q = idx // hw
        ok = (t_q < i // hw) & known[t_q]
        for o in range(masks.objects):
            sel = ok & (labels[idx] == o)
            if sel.any():
                out[o, i] = dist[i][sel].min()
    return out


def encode(x, cfg: EncoderConfig, params: list[LayerParams], masks: ObjectMaskSequence,
           threads: int | None = None):
    """Run ``cfg.layers`` encoder layers; return ``(features, affinity)``.

    ``affinity`` has shape ``(L, O, T, H, W)`` with values in ``[0, 1]``.
    """
    x = check_video(np.asarray(x, dtype=np.float64), "x")
    dims = x.shape[1:]
    if masks.labels.shape != dims:
        raise ValueError(f"masks {masks.labels.shape} do not cover the buffer {dims}")
    if len(params) != cfg.layers:
        raise ValueError(f"expected {cfg.layers} layer parameter sets, got {len(params)}")
    affinity = np.zeros((cfg.layers, masks.objects) + dims)
    prev = None
    for l, lp in enumerate(params):
        x, heads = encoder_layer(x, cfg, lp, layer=l, keep_weights=True, threads=threads)
        a = layer_affinity(heads, masks, prev if cfg.route_affinity else None)
        affinity[l] = a.reshape((masks.objects,) + dims)
        prev = a
    return x, affinity
