"""From per-angle minimisers to the coefficient a(x)."""
from __future__ import annotations

import math

import numpy as np

from .functional import PairField

__all__ = ["recover_w", "laplace_plus_grad_sq", "recover_a"]


def recover_w(pair: PairField, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(w, w_phi)`` with ``w = (r - s)/ε`` and ``w_phi = r``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return (pair.r - pair.s) / eps, pair.r.copy()


def laplace_plus_grad_sq(w: np.ndarray, h: float) -> np.ndarray:
    """``Δw + |∇w|²`` at interior nodes (five-point / central stencils), 0 on ∂Ω."""
    out = np.zeros_like(w)
    c = (slice(1, -1), slice(1, -1))
    lap = (w[2:, 1:-1] + w[:-2, 1:-1] + w[1:-1, 2:] + w[1:-1, :-2] - 4.0 * w[c]) / h**2
    wx = (w[2:, 1:-1] - w[:-2, 1:-1]) / (2 * h)
    wy = (w[1:-1, 2:] - w[1:-1, :-2]) / (2 * h)
    out[c] = lap + wx * wx + wy * wy
    return out


def recover_a(w_fields, h: float, h_phi: float) -> np.ndarray:
    """``a = (1/2π) Σ_n (Δw + |∇w|²)(·, φ_n) h_φ``, reduced in the given order.

    Sign convention: ``a = Δ√σ / √σ``, so ``w = ln(√σ u)`` satisfies
    ``Δw + |∇w|² = a`` away from the source.
    """
    total = None
    for w in w_fields:
        term = laplace_plus_grad_sq(np.asarray(w, dtype=float), h)
        total = term if total is None else total + term
    if total is None:
        raise ValueError("no w fields given")
    return total * h_phi / (2.0 * math.pi)
