"""Sparse connectivity patterns over a ``(T, H, W)`` cell grid.

A pattern maps a cell ``p`` to the set of cells it attends to.  Every
generator works one cell at a time and returns neighbors in ascending
flat order ``(t * H + y) * W + x``; the attention kernels reduce over
neighbors in exactly that order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

VARIANTS = ("grid", "strided", "local", "local_strided", "full")


class Coord3(NamedTuple):
    t: int
    y: int
    x: int


Dims = tuple[int, int, int]


def check_dims(dims) -> Dims:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"dims must be three positive extents (T, H, W), got {dims}")
    return dims  # type: ignore[return-value]


def check_coord(p, dims: Dims) -> Coord3:
    p = Coord3(*(int(v) for v in p))
    if not all(0 <= v < n for v, n in zip(p, dims)):
        raise ValueError(f"cell {tuple(p)} out of bounds for dims {dims}")
    return p


def flat_index(p, dims: Dims) -> int:
    return (p[0] * dims[1] + p[1]) * dims[2] + p[2]


def unflat(i: int, dims: Dims) -> Coord3:
    t, rest = divmod(int(i), dims[1] * dims[2])
    y, x = divmod(rest, dims[2])
    return Coord3(t, y, x)


@dataclass(frozen=True)
class PatternSpec:
    """Which sparse pattern a layer or head uses.

    ``h`` is the strided kernel (``None`` picks ``floor(sqrt(H))``) and ``r``
    the spatial radius of the local window.  ``phase`` pins a strided
    pattern to one of its two halves; left as ``None`` a multi-pattern
    variant means the union of its components, which is the connectivity
    of a whole multi-head layer.  ``anchored`` selects the literal
    offset-from-p cube for strided phase 1 instead of aligned blocks.
    """

    variant: str = "grid"
    h: int | None = None
    r: int = 7
    causal: bool = False
    phase: int | None = None
    anchored: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.h is not None and self.h < 1:
            raise ValueError("kernel h must be >= 1")
        if self.r < 0:
            raise ValueError("window radius r must be >= 0")
        if self.phase not in (None, 1, 2):
            raise ValueError("phase must be 1, 2 or None")
        if self.phase is not None and self.variant != "strided":
            raise ValueError("phase only applies to the strided variant")

    def kernel(self, dims: Dims) -> tuple[int, int]:
        """``(h_t, h)``: temporal and spatial strides for ``dims``."""
        T, H, W = dims
        h = self.h if self.h is not None else max(1, math.isqrt(H))
        if self.variant in ("strided", "local_strided") and h > max(H, W):
            raise ValueError(f"kernel h={h} exceeds max(H, W)={max(H, W)}")
        return min(h, T), h

    def components(self) -> list["PatternSpec"]:
        """Single-pattern specs making up this variant, in head order."""
        if self.variant == "strided" and self.phase is None:
            return [replace(self, phase=1), replace(self, phase=2)]
        if self.variant == "local_strided":
            return [
                replace(self, variant="local"),
                replace(self, variant="strided", phase=1),
                replace(self, variant="strided", phase=2),
            ]
        return [self]

    def for_head(self, k: int) -> "PatternSpec":
        """Pattern of head ``k`` under round-robin head assignment."""
        comps = self.components()
        return comps[k % len(comps)]

    def for_layer(self, l: int) -> "PatternSpec":
        """Pattern of layer ``l`` in layer-alternating mode."""
        return self.for_head(l)


def _axis_range(lo: int, hi: int) -> np.ndarray:
    return np.arange(max(lo, 0), hi, dtype=np.int64)


def _product(ts, ys, xs, dims: Dims) -> np.ndarray:
    _, H, W = dims
    return ((ts[:, None, None] * H + ys[None, :, None]) * W + xs[None, None, :]).ravel()


def _single(spec: PatternSpec, p: Coord3, dims: Dims) -> np.ndarray:
    T, H, W = dims
    t, y, x = p
    t_hi = t + 1 if spec.causal else T
    v = spec.variant
    if v == "full":
        return np.arange(t_hi * H * W, dtype=np.int64)
    if v == "grid":
        along_t = (np.arange(t_hi) * H + y) * W + x
        along_y = (t * H + np.arange(H)) * W + x
        along_x = (t * H + y) * W + np.arange(W)
        return np.unique(np.concatenate([along_t, along_y, along_x]))
    if v == "local":
        return _product(
            np.arange(t_hi), _axis_range(y - spec.r, min(y + spec.r + 1, H)),
            _axis_range(x - spec.r, min(x + spec.r + 1, W)), dims,
        )
    # strided, phase pinned by the caller
    ht, h = spec.kernel(dims)
    if spec.phase == 1:
        if spec.anchored:
            ranges = [np.arange(a, min(a + k, n)) for a, k, n in zip(p, (ht, h, h), dims)]
        else:
            ranges = [np.arange(a // k * k, min(a // k * k + k, n)) for a, k, n in zip(p, (ht, h, h), dims)]
    else:
        ranges = [np.arange(a % k, n, k) for a, k, n in zip(p, (ht, h, h), dims)]
    if spec.causal:
        ranges[0] = ranges[0][ranges[0] <= t]
    return _product(*ranges, dims)


def pattern_indices(spec: PatternSpec, p, dims) -> np.ndarray:
    """Flat indices of the cells ``p`` attends to, ascending."""
    dims = check_dims(dims)
    p = check_coord(p, dims)
    comps = spec.components()
    if len(comps) == 1:
        return _single(comps[0], p, dims)
    return np.unique(np.concatenate([_single(c, p, dims) for c in comps]))


def pattern(spec: PatternSpec, p, dims) -> list[Coord3]:
    dims = check_dims(dims)
    return [unflat(i, dims) for i in pattern_indices(spec, p, dims)]


def grid_pattern(p, dims) -> list[Coord3]:
    """Cells sharing at least two of ``p``'s coordinates (``p`` included)."""
    return pattern(PatternSpec("grid"), p, dims)


def strided_pattern(p, dims, h: int, phase: int, anchored: bool = False) -> list[Coord3]:
    return pattern(PatternSpec("strided", h=h, phase=phase, anchored=anchored), p, dims)


def local_pattern(p, dims, r: int) -> list[Coord3]:
    return pattern(PatternSpec("local", r=r), p, dims)


def pattern_size(spec: PatternSpec, p, dims) -> int:
    return len(pattern_indices(spec, p, dims))


def layer_specs(spec: PatternSpec, layers: int, alternate: bool = False) -> list[PatternSpec]:
    """Per-layer connectivity: the head union, or one component per layer."""
    if alternate:
        return [spec.for_layer(l) for l in range(layers)]
    return [spec] * layers


@dataclass
class ReachabilityReport:
    dims: Dims
    variant: str
    source: Coord3
    counts: list[int] = field(default_factory=list)
    layers_to_closure: int | None = None

    @property
    def closure(self) -> int | str:
        return "never" if self.layers_to_closure is None else self.layers_to_closure

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "variant": self.variant,
            "source": list(self.source),
            "counts": list(self.counts),
            "layers_to_closure": self.closure,
        }

    def to_text(self) -> str:
        T, H, W = self.dims
        lines = [
            f"dims: {T}x{H}x{W}",
            f"variant: {self.variant}",
            f"source: {tuple(self.source)}",
        ]
        lines += [f"layer {k + 1}: {c}" for k, c in enumerate(self.counts)]
        lines.append(f"layers_to_closure: {self.closure}")
        return "\n".join(lines) + "\n"


def reachability(specs: Sequence[PatternSpec], dims, source=(0, 0, 0)) -> ReachabilityReport:
    """Breadth-first closure from ``source`` through one pattern per layer."""
    dims = check_dims(dims)
    source = check_coord(source, dims)
    total = dims[0] * dims[1] * dims[2]
    reached = np.zeros(total, dtype=bool)
    reached[flat_index(source, dims)] = True
    report = ReachabilityReport(dims, "+".join(dict.fromkeys(s.variant for s in specs)), source)
    for k, spec in enumerate(specs):
        nxt = reached.copy()
        for c in np.flatnonzero(reached):
            nxt[pattern_indices(spec, unflat(c, dims), dims)] = True
        reached = nxt
        count = int(reached.sum())
        report.counts.append(count)
        if count == total and report.layers_to_closure is None:
            report.layers_to_closure = k + 1
    return report


def adjacency(spec: PatternSpec, dims) -> np.ndarray:
    """Dense ``(S, S)`` 0/1 matrix with ``A[p, q] = 1`` iff ``q`` in ``I_p``."""
    dims = check_dims(dims)
    total = dims[0] * dims[1] * dims[2]
    a = np.zeros((total, total), dtype=np.float32)
    for i in range(total):
        a[i, pattern_indices(spec, unflat(i, dims), dims)] = 1.0
    return a


def reach_counts_all(specs: Sequence[PatternSpec], dims) -> np.ndarray:
    """Reached-cell counts for every source at once, shape ``(layers, S)``.

    Same frontier expansion as :func:`reachability`, run as boolean matrix
    products so all sources advance together.
    """
    dims = check_dims(dims)
    total = dims[0] * dims[1] * dims[2]
    if total > 4096:
        raise ValueError("all-source reachability is limited to 4096 cells")
    cache: dict[PatternSpec, np.ndarray] = {}
    reached = np.eye(total, dtype=np.float32)
    out = []
    for spec in specs:
        if spec not in cache:
            cache[spec] = adjacency(spec, dims)
        reached = ((reached @ cache[spec]) > 0).astype(np.float32)
        out.append(reached.sum(axis=1).astype(np.int64))
    return np.array(out)
