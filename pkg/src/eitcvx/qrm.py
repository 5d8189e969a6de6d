"""Quasi-reversibility recovery of √σ from a(x), and reconstruction metrics.

Minimises ``K(V) = Σ_free (ΔV - aV)² h²`` subject to ``V = 1`` on ∂Ω and a
zero normal derivative on ∂Ω.  Both conditions are imposed by pinning the
outer ring and the first interior ring to 1; the remaining nodes are free.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Grid2D

__all__ = [
    "QrmError",
    "qrm_free_mask",
    "eval_K",
    "grad_K",
    "minimize_K",
    "sigma_from_V",
    "contrast",
    "high_region",
    "centroid",
    "relative_l2",
]


class QrmError(RuntimeError):
    pass


def qrm_free_mask(nx: int, ny: int) -> np.ndarray:
    m = np.zeros((nx, ny), dtype=bool)
    m[2 : nx - 2, 2 : ny - 2] = True
    return m


def _check_feasible(V, atol=1e-12):
    fixed = ~qrm_free_mask(*V.shape)
    if np.max(np.abs(V[fixed] - 1.0)) > atol:
        raise QrmError("V violates the boundary conditions (two outer rings must equal 1)")


def _residual(V, a, h):
    lap = (V[2:, 1:-1] + V[:-2, 1:-1] + V[1:-1, 2:] + V[1:-1, :-2] - 4.0 * V[1:-1, 1:-1]) / h**2
    res = np.zeros_like(V)
    res[1:-1, 1:-1] = lap - a[1:-1, 1:-1] * V[1:-1, 1:-1]
    res[~qrm_free_mask(*V.shape)] = 0.0
    return res


def eval_K(V: np.ndarray, a: np.ndarray, h: float) -> float:
    _check_feasible(V)
    res = _residual(V, a, h)
    return h * h * math.fsum((res * res).ravel().tolist())


def _operator(a: np.ndarray, h: float) -> sp.csr_matrix:
    """Full-grid matrix of V ↦ ΔV - aV restricted to free rows."""
    nx, ny = a.shape
    lx = sp.diags([np.ones(nx - 1), -2 * np.ones(nx), np.ones(nx - 1)], [-1, 0, 1]) / h**2
    ly = sp.diags([np.ones(ny - 1), -2 * np.ones(ny), np.ones(ny - 1)], [-1, 0, 1]) / h**2
    op = sp.kron(lx, sp.identity(ny)) + sp.kron(sp.identity(nx), ly) - sp.diags(a.ravel())
    return op.tocsr()[np.flatnonzero(qrm_free_mask(nx, ny).ravel())]


def grad_K(V: np.ndarray, a: np.ndarray, h: float) -> np.ndarray:
    """Gradient of K over the free nodes (zero on the pinned rings)."""
    res = _residual(V, a, h)
    free = qrm_free_mask(*V.shape)
    op = _operator(a, h)
    g = 2.0 * h * h * (op.T @ res.ravel()[free.ravel()])
    g = g.reshape(V.shape)
    g[~free] = 0.0
    return g


def minimize_K(a: np.ndarray, grid: Grid2D, ridge: float = 0.0, rtol: float = 1e-8) -> np.ndarray:
    """Unique minimiser V of K with the pinned boundary rings.

    The normal equations (plus an optional ridge ``ridge * I``) are factorised
    directly; the result is checked against ``rtol`` on the normal-equation
    residual.
    """
    a = np.asarray(a, dtype=float)
    if a.shape != grid.shape:
        raise QrmError("a does not match the grid")
    if not np.all(np.isfinite(a)):
        raise QrmError("a contains non-finite values")
    nx, ny = grid.shape
    free = np.flatnonzero(qrm_free_mask(nx, ny).ravel())
    fixed = np.setdiff1d(np.arange(nx * ny), free)
    op = _operator(a, grid.h)
    A = op[:, free]
    b = -(op[:, fixed] @ np.ones(len(fixed)))
    N = (A.T @ A + ridge * sp.identity(len(free))).tocsc()
    rhs = A.T @ b
    x = spla.splu(N).solve(rhs)
    resid = np.linalg.norm(N @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if resid > rtol and np.linalg.norm(rhs) > 0:
        raise QrmError(f"normal equations solved only to relative residual {resid:.2e}")
    V = np.ones(grid.shape)
    V.ravel()[free] = x
    return V


def sigma_from_V(V: np.ndarray) -> np.ndarray:
    """σ = V² nodewise, unclamped."""
    return np.asarray(V, dtype=float) ** 2


def high_region(sigma: np.ndarray) -> np.ndarray:
    """Nodes above 1 + half the range of σ (inclusion estimate without ground truth)."""
    lo, hi = float(np.min(sigma)), float(np.max(sigma))
    if hi - lo <= 0:
        return np.zeros(sigma.shape, dtype=bool)
    return sigma > 1.0 + 0.5 * (hi - lo)


def contrast(sigma: np.ndarray, inclusion: np.ndarray | None = None) -> float:
    """Computed inclusion/background contrast: max of σ over the inclusion, over 1."""
    if inclusion is None or not np.any(inclusion):
        inclusion = high_region(sigma)
    if not np.any(inclusion):
        return float(np.max(sigma))
    return float(np.max(sigma[inclusion])) / 1.0


def centroid(mask: np.ndarray, grid: Grid2D) -> tuple[float, float]:
    X, Y = grid.mesh()
    if not np.any(mask):
        return (math.nan, math.nan)
    return float(X[mask].mean()), float(Y[mask].mean())


def relative_l2(sigma: np.ndarray, sigma_true: np.ndarray) -> float:
    return float(np.linalg.norm(sigma - sigma_true) / np.linalg.norm(sigma_true))
