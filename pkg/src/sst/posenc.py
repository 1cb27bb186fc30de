"""Absolute positional encodings added to the frame-embedding buffer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sst.patterns import check_dims

KINDS = ("none", "sinusoidal")


@dataclass(frozen=True)
class PositionalEncodingSpec:
    kind: str = "sinusoidal"
    # channels per (t, y, x) axis; None splits C in even thirds, remainder to x
    # (an odd band ends with a lone sine channel)
    allocation: tuple[int, int, int] | None = None
    base: float = 10000.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown positional encoding {self.kind!r}; choose from {KINDS}")
        if self.base <= 0:
            raise ValueError("base wavelength must be positive")

    def split(self, channels: int) -> tuple[int, int, int]:
        if self.allocation is not None:
            alloc = tuple(int(a) for a in self.allocation)
        else:
            third = 2 * (channels // 6)
            alloc = (third, third, channels - 2 * third)
        if sum(alloc) != channels or any(a < 2 for a in alloc):
            raise ValueError(f"cannot split {channels} channels into per-axis bands of at least 2 (got {alloc})")
        return alloc  # type: ignore[return-value]


def axis_encoding(n: int, width: int, base: float) -> np.ndarray:
    """``(width, n)`` band: channel ``2i`` is ``sin(pos w_i)``, ``2i+1`` is ``cos``."""
    pos = np.arange(n, dtype=np.float64)
    freqs = base ** (-np.arange(0, width, 2, dtype=np.float64) / width)
    ang = freqs[:, None] * pos[None, :]
    band = np.empty((width, n))
    band[0::2] = np.sin(ang)
    band[1::2] = np.cos(ang[: width // 2])
    return band


def positional_encoding(channels: int, dims, spec: PositionalEncodingSpec | str = "sinusoidal") -> np.ndarray:
    """Encoding tensor of shape ``(channels, T, H, W)``."""
    if isinstance(spec, str):
        spec = PositionalEncodingSpec(spec)
    T, H, W = check_dims(dims)
    out = np.zeros((channels, T, H, W))
    if spec.kind == "none":
        return out
    ct, cy, cx = spec.split(channels)
    out[:ct] = axis_encoding(T, ct, spec.base)[:, :, None, None]
    out[ct:ct + cy] = axis_encoding(H, cy, spec.base)[:, None, :, None]
    out[ct + cy:] = axis_encoding(W, cx, spec.base)[:, None, None, :]
    return out


def add_positional_encoding(x: np.ndarray, spec: PositionalEncodingSpec | str) -> np.ndarray:
    return x + positional_encoding(x.shape[0], x.shape[1:], spec)
