"""Carleman-weighted functional for the coupled (r, s) system at one source angle.

The unknown pair approximates ``r ≈ w_φ`` and ``s ≈ w_φ - εw`` on the Ω grid.
For a pair the residuals are::

    L1 = Δr + 2 ∇r·∇((r - s)/ε)
    L2 = Δs + 2 ∇r·∇((r - s)/ε)

and the functional is::

    J = √ε Σ_free (L1² + L2²) ψ_λ h² + α (‖r‖²_H2 + ‖s‖²_H2)

with ψ_λ(x) = exp(2λx²).  Node roles on the ``nx`` x ``ny`` grid:

* outer ring (∂Ω): Dirichlet data;
* column ``i = nx - 2`` (first layer inside Γ): fixed by the Neumann data,
  ``value = value(Γ) - h * datum``;
* all other nodes are free unknowns and carry the residual equations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels_py, kernels
from .geometry import Grid2D, boundary_indices, gamma_indices

__all__ = [
    "ConvexParams",
    "PairField",
    "free_mask",
    "carleman_weight",
    "eval_L1",
    "eval_L2",
    "residual_weights",
    "h2_norm_sq",
    "h2_norm_grad",
    "eval_J",
    "grad_J",
    "J_and_grad",
    "convexity_probe",
]

_LOG_OVERFLOW = 700.0


@dataclass(frozen=True)
class ConvexParams:
    lam: float = 3.0
    alpha: float = 0.01
    eps: float = 0.0002
    gamma: float = 0.1
    grad_tol: float = 1e-2
    max_iters: int = 200
    R: float = math.inf
    method: str = "newton"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        for name in ("alpha", "eps", "gamma"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.method not in ("newton", "gauss-newton", "gradient"):
            raise ValueError(f"unknown method {self.method!r}")

    def with_(self, **kw) -> "ConvexParams":
        return replace(self, **kw)


def free_mask(nx: int, ny: int) -> np.ndarray:
    m = np.zeros((nx, ny), dtype=bool)
    m[1 : nx - 2, 1 : ny - 1] = True
    return m


@dataclass
class PairField:
    """State (r, s) on the Ω grid with its boundary constraints for one φ.

    Boundary arrays follow :func:`eitcvx.geometry.boundary_indices` (Dirichlet)
    and :func:`eitcvx.geometry.gamma_indices` (Neumann, outward normal +x).
    """

    grid: Grid2D
    r: np.ndarray
    s: np.ndarray
    r_dirichlet: np.ndarray
    r_neumann: np.ndarray
    s_dirichlet: np.ndarray
    s_neumann: np.ndarray
    phi: float = 0.0
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_boundary(cls, grid: Grid2D, r_dirichlet, r_neumann, s_dirichlet, s_neumann,
                      phi: float = 0.0, r=None, s=None) -> "PairField":
        """Pair with zero (or given) interior values and the constraints imposed."""
        r = np.zeros(grid.shape) if r is None else np.array(r, dtype=float)
        s = np.zeros(grid.shape) if s is None else np.array(s, dtype=float)
        pair = cls(grid, r, s, np.asarray(r_dirichlet, float), np.asarray(r_neumann, float),
                   np.asarray(s_dirichlet, float), np.asarray(s_neumann, float), phi)
        pair.apply_constraints()
        return pair

    @property
    def free(self) -> np.ndarray:
        return free_mask(*self.grid.shape)

    def _impose(self, u, dirichlet, neumann):
        nx, ny = self.grid.shape
        bi, bj = boundary_indices(nx, ny)
        gi, gj = gamma_indices(nx, ny)
        u[bi, bj] = dirichlet
        u[gi - 1, gj] = u[gi, gj] - self.grid.h * neumann

    def apply_constraints(self) -> "PairField":
        self._impose(self.r, self.r_dirichlet, self.r_neumann)
        self._impose(self.s, self.s_dirichlet, self.s_neumann)
        return self

    def copy(self) -> "PairField":
        return replace(self, r=self.r.copy(), s=self.s.copy(), meta=dict(self.meta))

    def with_values(self, r, s) -> "PairField":
        """Copy with new values; extended-precision arrays keep their dtype."""
        r, s = np.asarray(r), np.asarray(s)
        return replace(self, r=np.array(r, dtype=np.result_type(r, np.float64)),
                       s=np.array(s, dtype=np.result_type(s, np.float64)), meta=dict(self.meta))

    def same_constraints(self, other: "PairField") -> bool:
        return (
            self.grid == other.grid
            and np.array_equal(self.r_dirichlet, other.r_dirichlet)
            and np.array_equal(self.r_neumann, other.r_neumann)
            and np.array_equal(self.s_dirichlet, other.s_dirichlet)
            and np.array_equal(self.s_neumann, other.s_neumann)
        )


def carleman_weight(x, lam: float):
    """ψ_λ(x) = exp(2λx²), a function of the first coordinate only."""
    x = np.asarray(x, dtype=float)
    arg = 2.0 * lam * x * x
    if np.any(arg > _LOG_OVERFLOW):
        raise OverflowError(f"Carleman weight exp({arg.max():.1f}) overflows; reduce lambda")
    out = np.exp(arg)
    return float(out) if out.ndim == 0 else out


def eval_L1(pair: PairField, eps: float) -> np.ndarray:
    """L1 at the free nodes (zero elsewhere)."""
    L1, _ = kernels.residuals(pair.r, pair.s, pair.grid.h, eps)
    return np.where(pair.free, L1, 0.0)


def eval_L2(pair: PairField, eps: float) -> np.ndarray:
    _, L2 = kernels.residuals(pair.r, pair.s, pair.grid.h, eps)
    return np.where(pair.free, L2, 0.0)


def residual_weights(grid: Grid2D, params: ConvexParams, dtype=np.float64) -> np.ndarray:
    """Per-node weight √ε ψ_λ h² on free nodes, zero elsewhere."""
    if dtype == np.float64:
        X, _ = grid.mesh()
        w = math.sqrt(params.eps) * carleman_weight(X, params.lam) * grid.h ** 2
    else:
        wt = np.dtype(dtype).type
        x = wt(grid.origin[0]) + wt(grid.h) * np.arange(grid.nx, dtype=dtype)
        X = np.repeat(x[:, None], grid.ny, axis=1)
        w = np.sqrt(wt(params.eps)) * np.exp(wt(2) * wt(params.lam) * X * X) * wt(grid.h) ** 2
    return np.where(free_mask(*grid.shape), w, np.zeros((), dtype=dtype))


def _h2_terms(u, h):
    dx = np.diff(u, axis=0) / h
    dy = np.diff(u, axis=1) / h
    dxx = (u[2:, :] - 2.0 * u[1:-1, :] + u[:-2, :]) / h**2
    dyy = (u[:, 2:] - 2.0 * u[:, 1:-1] + u[:, :-2]) / h**2
    dxy = (u[1:, 1:] - u[1:, :-1] - u[:-1, 1:] + u[:-1, :-1]) / h**2
    return u, dx, dy, dxx, dyy, dxy


def _total(arr):
    """Accurate sum: exact-rounded for float64, native sum for extended precision."""
    arr = np.asarray(arr)
    if arr.dtype == np.float64:
        return math.fsum(arr.ravel().tolist())
    return np.sum(arr, dtype=arr.dtype)


def h2_norm_sq(u: np.ndarray, h: float) -> float:
    """Discrete H² norm squared: h² Σ (u² + |∇u|² + u_xx² + u_yy² + u_xy²).

    First differences are taken on grid edges, u_xy on cells, pure second
    differences at nodes interior in that direction.
    """
    return h * h * sum(_total(t * t) for t in _h2_terms(u, h))


def h2_norm_grad(u: np.ndarray, h: float) -> np.ndarray:
    """Gradient of :func:`h2_norm_sq` with respect to every node of ``u``."""
    _, dx, dy, dxx, dyy, dxy = _h2_terms(u, h)
    g = 2.0 * u.copy()
    k = 2.0 / h
    g[1:, :] += k * dx
    g[:-1, :] -= k * dx
    g[:, 1:] += k * dy
    g[:, :-1] -= k * dy
    k2 = 2.0 / h**2
    g[2:, :] += k2 * dxx
    g[1:-1, :] -= 2 * k2 * dxx
    g[:-2, :] += k2 * dxx
    g[:, 2:] += k2 * dyy
    g[:, 1:-1] -= 2 * k2 * dyy
    g[:, :-2] += k2 * dyy
    g[1:, 1:] += k2 * dxy
    g[1:, :-1] -= k2 * dxy
    g[:-1, 1:] -= k2 * dxy
    g[:-1, :-1] += k2 * dxy
    return h * h * g


def _fit_value(L1, L2, weights):
    return _total(weights * (L1 * L1 + L2 * L2))


def eval_J(pair: PairField, params: ConvexParams, weights: np.ndarray | None = None) -> float:
    """Discrete functional value.

    Arrays in ``np.longdouble`` are evaluated entirely in extended precision
    (used by finite-difference checks).
    """
    if weights is None:
        weights = residual_weights(pair.grid, params)
    h = pair.grid.h
    if pair.r.dtype == np.float64:
        L1, L2 = kernels.residuals(pair.r, pair.s, h, params.eps)
    else:
        wt = pair.r.dtype.type
        h, eps = wt(h), wt(params.eps)
        weights = residual_weights(pair.grid, params, dtype=pair.r.dtype)
        L1, L2 = _kernels_py.residuals(pair.r, pair.s, h, eps)
        return _fit_value(L1, L2, weights) + wt(params.alpha) * (h2_norm_sq(pair.r, h) + h2_norm_sq(pair.s, h))
    return _fit_value(L1, L2, weights) + params.alpha * (h2_norm_sq(pair.r, h) + h2_norm_sq(pair.s, h))


def J_and_grad(pair: PairField, params: ConvexParams, weights: np.ndarray | None = None):
    """Return ``(J, grad_r, grad_s)``; gradients vanish on constrained nodes."""
    if weights is None:
        weights = residual_weights(pair.grid, params)
    h = pair.grid.h
    L1, L2, gr, gs = kernels.fit_gradient(pair.r, pair.s, weights, h, params.eps)
    J = _fit_value(L1, L2, weights) + params.alpha * (h2_norm_sq(pair.r, h) + h2_norm_sq(pair.s, h))
    gr = gr + params.alpha * h2_norm_grad(pair.r, h)
    gs = gs + params.alpha * h2_norm_grad(pair.s, h)
    free = pair.free
    gr[~free] = 0.0
    gs[~free] = 0.0
    return J, gr, gs


def grad_J(pair: PairField, params: ConvexParams, weights: np.ndarray | None = None):
    """Exact gradient of the discrete J over the free nodes, as ``(grad_r, grad_s)``."""
    _, gr, gs = J_and_grad(pair, params, weights)
    return gr, gs


def convexity_probe(pair1: PairField, pair2: PairField, params: ConvexParams) -> float:
    """Strong-convexity gap ``J(p2) - J(p1) - <∇J(p1), p2 - p1>``."""
    if not pair1.same_constraints(pair2):
        raise ValueError("convexity probe needs pairs with identical boundary data")
    weights = residual_weights(pair1.grid, params)
    J1, gr, gs = J_and_grad(pair1, params, weights)
    J2 = eval_J(pair2, params, weights)
    dr = pair2.r - pair1.r
    ds = pair2.s - pair1.s
    lin = math.fsum((gr * dr).ravel().tolist()) + math.fsum((gs * ds).ravel().tolist())
    return J2 - J1 - lin
