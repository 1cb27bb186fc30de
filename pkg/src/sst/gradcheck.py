"""Central finite-difference checks of the attention backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sst.attention import attention_backward, sparse_attention
from sst.patterns import PatternSpec


def finite_difference(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (``x`` is restored)."""
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for j in range(flat.size):
        old = flat[j]
        flat[j] = old + eps
        fp = f()
        flat[j] = old - eps
        fm = f()
        flat[j] = old
        gf[j] = (fp - fm) / (2 * eps)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``; 0 when both vanish."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


@dataclass
class GradcheckResult:
    variant: str
    trials: int
    errors: list[tuple[float, float, float]]  # per trial (Q, K, V)

    @property
    def max_error(self) -> float:
        return max((max(e) for e in self.errors), default=0.0)


def check_sparse_attention(q, k, v, spec: PatternSpec, scale: bool = False,
                           eps: float = 1e-5, upstream=None, rng=None):
    """Relative errors of analytic vs numeric gradients of ``sum(G * out)``."""
    rng = rng or np.random.default_rng(0)
    q, k, v = (np.array(a, dtype=np.float64) for a in (q, k, v))
    g = rng.standard_normal(q.shape) if upstream is None else np.asarray(upstream, dtype=np.float64)
    out = sparse_attention(q, k, v, spec, scale=scale, keep_weights=True)
    analytic = attention_backward(g, out.saved)

    def loss():
        return float(np.sum(g * sparse_attention(q, k, v, spec, scale=scale).values))

    numeric = [finite_difference(loss, a, eps) for a in (q, k, v)]
    return tuple(relative_error(a, n) for a, n in zip(analytic, numeric)), analytic, numeric


def gradcheck(spec: PatternSpec, trials: int = 20, channels: int = 2, dims=(2, 3, 3),
              seed: int = 0, eps: float = 1e-5) -> GradcheckResult:
    errors = []
    for i in range(trials):
        rng = np.random.default_rng(seed + i)
        shape = (channels,) + tuple(dims)
        q, k, v = (rng.standard_normal(shape) for _ in range(3))
        errs, _, _ = check_sparse_attention(q, k, v, spec, eps=eps, rng=rng)
        errors.append(errs)
    return GradcheckResult(spec.variant, trials, errors)
