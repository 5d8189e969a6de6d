"""Minimisation of the weighted functional at one source angle.

Three schemes share the stopping rule ``‖∇J‖₂ < grad_tol`` (Euclidean
norm over the free nodes of the stacked (r, s) gradient):

``"newton"`` (default)
    Newton's method on the first-order conditions written with a multiplier
    ``y = w L`` (``w`` the residual weights), so the linear systems involve
    the Jacobian of (L1, L2) rather than its normal matrix.  Each outer step
    is accepted only if J decreases.  The final iterate is refined with the
    gradient evaluated in extended precision, because near the minimiser the
    Hessian is so large that no float64 state has ``‖∇J‖`` below ~0.1.
    Values of J in this scheme are compared and traced in extended precision.
``"gradient"``
    ``z ← z - γ ∇J(z)``, halving γ whenever J would increase.
``"gauss-newton"``
    Levenberg-Marquardt steps on the least-squares form of J, built from the
    exact sparse Jacobian of (L1, L2); a step is accepted only if J decreases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .functional import (
    ConvexParams,
    PairField,
    J_and_grad,
    eval_J,
    free_mask,
    residual_weights,
)

__all__ = [
    "MinimizeResult",
    "difference_operators",
    "harmonic_extension",
    "minimize_single_phi",
]


@dataclass
class MinimizeResult:
    pair: PairField
    trace: list = field(default_factory=list)  # (iteration, J, |∇J|)
    iterations: int = 0
    converged: bool = False
    inner_iterations: int = 0

    @property
    def final_J(self) -> float:
        return self.trace[-1][1]

    @property
    def final_grad_norm(self) -> float:
        return self.trace[-1][2]


@dataclass(frozen=True)
class _Operators:
    free_idx: np.ndarray      # flat indices of free nodes (also the residual rows)
    lap: sp.csr_matrix        # (n_free x N) five-point Laplacian at free nodes
    dx: sp.csr_matrix         # central differences at free nodes
    dy: sp.csr_matrix
    reg: sp.csr_matrix        # (m x N) stacked h * {u, ∇u, D²u} terms of the H² norm


def _second_diff(n, h):
    return sp.diags([np.ones(n - 2), -2 * np.ones(n - 2), np.ones(n - 2)], [0, 1, 2],
                    shape=(n - 2, n)) / h**2


@lru_cache(maxsize=8)
def difference_operators(nx: int, ny: int, h: float) -> _Operators:
    """Sparse stencil matrices on the flattened ``[i, j]`` grid (row-major)."""
    N = nx * ny
    Ix, Iy = sp.identity(nx), sp.identity(ny)
    cx = sp.diags([-np.ones(nx - 1), np.ones(nx - 1)], [-1, 1], shape=(nx, nx)) / (2 * h)
    cy = sp.diags([-np.ones(ny - 1), np.ones(ny - 1)], [-1, 1], shape=(ny, ny)) / (2 * h)
    lx = sp.diags([np.ones(nx - 1), -2 * np.ones(nx), np.ones(nx - 1)], [-1, 0, 1]) / h**2
    ly = sp.diags([np.ones(ny - 1), -2 * np.ones(ny), np.ones(ny - 1)], [-1, 0, 1]) / h**2
    free_idx = np.flatnonzero(free_mask(nx, ny).ravel())
    lap = (sp.kron(lx, Iy) + sp.kron(Ix, ly)).tocsr()[free_idx]
    dx = sp.kron(cx, Iy).tocsr()[free_idx]
    dy = sp.kron(Ix, cy).tocsr()[free_idx]
    fx = sp.diags([-np.ones(nx - 1), np.ones(nx - 1)], [0, 1], shape=(nx - 1, nx)) / h
    fy = sp.diags([-np.ones(ny - 1), np.ones(ny - 1)], [0, 1], shape=(ny - 1, ny)) / h
    reg = h * sp.vstack(
        [
            sp.identity(N),
            sp.kron(fx, Iy),
            sp.kron(Ix, fy),
            sp.kron(_second_diff(nx, h), Iy),
            sp.kron(Ix, _second_diff(ny, h)),
            sp.kron(fx, fy),
        ]
    ).tocsr()
    return _Operators(free_idx, lap, dx, dy, reg)


def harmonic_extension(pair: PairField) -> PairField:
    """Pair whose free values solve the discrete Laplace equation.

    Constrained nodes keep their prescribed values; used as the initial guess.
    """
    nx, ny = pair.grid.shape
    ops = difference_operators(nx, ny, pair.grid.h)
    A = ops.lap[:, ops.free_idx].tocsc()
    lu = spla.splu(A)
    out = pair.copy()
    for u in (out.r, out.s):
        flat = u.ravel()
        flat[ops.free_idx] = 0.0
        flat[ops.free_idx] = lu.solve(-(ops.lap @ flat))
    return out


def _grad_norm(gr, gs):
    return math.sqrt(float(np.sum(gr * gr) + np.sum(gs * gs)))


def minimize_single_phi(pair: PairField, params: ConvexParams, callback=None) -> MinimizeResult:
    """Minimise J from ``pair`` (which must satisfy its constraints).

    Returns the last accepted iterate.  ``converged`` is False when the
    iteration cap was hit (or no further decrease was possible) before
    ``‖∇J‖ < grad_tol``.
    """
    weights = residual_weights(pair.grid, params)
    if params.method == "gradient":
        return _gradient_descent(pair.copy(), params, weights, callback)
    if params.method == "gauss-newton":
        return _gauss_newton(pair.copy(), params, weights, callback)
    return _newton(pair.copy(), params, weights, callback)


def _gradient_descent(pair, params, weights, callback):
    J, gr, gs = J_and_grad(pair, params, weights)
    gn = _grad_norm(gr, gs)
    res = MinimizeResult(pair, [(0, J, gn)])
    gamma = params.gamma
    it = 0
    while gn >= params.grad_tol and it < params.max_iters:
        it += 1
        accepted = False
        for _ in range(200):
            trial = pair.with_values(pair.r - gamma * gr, pair.s - gamma * gs)
            Jt, grt, gst = J_and_grad(trial, params, weights)
            if Jt <= J:
                accepted = True
                break
            gamma *= 0.5
        if not accepted:
            break
        pair, J, gr, gs = trial, Jt, grt, gst
        gn = _grad_norm(gr, gs)
        res.trace.append((it, J, gn))
        if callback is not None:
            callback(it, J, gn)
    res.pair, res.iterations = pair, it
    res.converged = gn < params.grad_tol
    res.pair.meta.update(gamma_final=gamma)
    return res


def _jacobian(pair, params, ops, sqrt_w):
    """Jacobian of the weighted residual vector with respect to (r_free, s_free)."""
    r = pair.r.ravel()
    s = pair.s.ravel()
    eps = params.eps
    rx, ry = ops.dx @ r, ops.dy @ r
    sx, sy = ops.dx @ s, ops.dy @ s
    wx, wy = (rx - sx) / eps, (ry - sy) / eps
    adv_r = (sp.diags(2 * wx + 2 * rx / eps) @ ops.dx + sp.diags(2 * wy + 2 * ry / eps) @ ops.dy)
    adv_s = -(2.0 / eps) * (sp.diags(rx) @ ops.dx + sp.diags(ry) @ ops.dy)
    cols = ops.free_idx
    W = sp.diags(sqrt_w)
    Jr = adv_r[:, cols]
    Js = adv_s[:, cols]
    L = ops.lap[:, cols]
    return sp.bmat([[W @ (L + Jr), W @ Js], [W @ Jr, W @ (L + Js)]]).tocsc()


def _curvature(pair, params, ops, weights_free):
    """Second-order part Σ_k (∂J/∂L_k) ∇²L_k of the Hessian (L is quadratic)."""
    r = pair.r.ravel()
    s = pair.s.ravel()
    rx, ry = ops.dx @ r, ops.dy @ r
    sx, sy = ops.dx @ s, ops.dy @ s
    lap_r, lap_s = ops.lap @ r, ops.lap @ s
    adv = 2.0 * (rx * (rx - sx) + ry * (ry - sy)) / params.eps
    L1 = lap_r + adv
    L2 = lap_s + adv
    return _curvature_mu(params, ops, 2.0 * weights_free * (L1 + L2))


def _curvature_mu(params, ops, mu):
    """Σ_k μ_k ∇²adv_k over the free unknowns, adv being the shared advection term."""
    cols = ops.free_idx
    Dx, Dy = ops.dx[:, cols], ops.dy[:, cols]
    M = (Dx.T @ sp.diags(mu) @ Dx + Dy.T @ sp.diags(mu) @ Dy) * (2.0 / params.eps)
    return sp.bmat([[2.0 * M, -M], [-M, None]]).tocsc()


def _fit_root(pair, params, ops):
    """Newton iterate on the square system L1 = L2 = 0 over the free nodes.

    Returns None when the step does not reduce the residual norm.
    """
    from . import kernels

    cols = ops.free_idx
    h, eps = pair.grid.h, params.eps

    def resid(p):
        L1, L2 = kernels.residuals(p.r, p.s, h, eps)
        return np.concatenate([L1.ravel()[cols], L2.ravel()[cols]])

    best, F = pair, resid(pair)
    for _ in range(8):
        Jac = _jacobian(best, params, ops, np.ones(len(cols)))
        try:
            step = spla.splu(Jac).solve(-F)
        except RuntimeError:
            break
        trial = _shift(best, cols, step)
        Ft = resid(trial)
        if not np.linalg.norm(Ft) < np.linalg.norm(F):
            break
        best, F = trial, Ft
        if np.linalg.norm(F) < 1e-8:
            break
    return best


def _shift(pair, cols, step):
    r_new = pair.r.copy()
    s_new = pair.s.copy()
    r_new.ravel()[cols] += step[: len(cols)]
    s_new.ravel()[cols] += step[len(cols):]
    return pair.with_values(r_new, s_new)


def _gauss_newton(pair, params, weights, callback):
    nx, ny = pair.grid.shape
    ops = difference_operators(nx, ny, pair.grid.h)
    cols = ops.free_idx
    sqrt_w = np.sqrt(weights.ravel()[cols])
    B = ops.reg[:, cols]
    BtB = (B.T @ B).tocsc()
    reg_block = params.alpha * sp.block_diag([BtB, BtB]).tocsc()

    J, gr, gs = J_and_grad(pair, params, weights)
    gn = _grad_norm(gr, gs)
    res = MinimizeResult(pair, [(0, J, gn)])
    mu = 1e-4
    it = 0
    stalled = 0
    while gn >= params.grad_tol and it < params.max_iters:
        it += 1
        Jac = _jacobian(pair, params, ops, sqrt_w)
        H = (Jac.T @ Jac + reg_block + 0.5 * _curvature(pair, params, ops, sqrt_w**2)).tocsc()
        g = np.concatenate([gr.ravel()[cols], gs.ravel()[cols]]) * 0.5
        d = (Jac.T @ Jac + reg_block).diagonal()
        scale = 1.0 / np.sqrt(d)
        Hs = sp.diags(scale) @ H @ sp.diags(scale)
        accepted = False
        for _ in range(30):
            M = (Hs + mu * sp.identity(Hs.shape[0])).tocsc()
            step = -scale * spla.splu(M).solve(scale * g)
            trial = _shift(pair, cols, step)
            Jt, grt, gst = J_and_grad(trial, params, weights)
            if Jt < J:
                accepted = True
                mu = max(mu / 10.0, 1e-12)
                break
            mu *= 10.0
        if not accepted:
            break
        stalled = stalled + 1 if (J - Jt) <= 1e-15 * abs(J) else 0
        pair, J, gr, gs = trial, Jt, grt, gst
        gn = _grad_norm(gr, gs)
        res.trace.append((it, J, gn))
        if callback is not None:
            callback(it, J, gn)
        if stalled >= 3:
            break
    res.pair, res.iterations = pair, it
    res.converged = gn < params.grad_tol
    return res


def _newton(pair, params, weights, callback):
    nx, ny = pair.grid.shape
    h = pair.grid.h
    ops = difference_operators(nx, ny, h)
    cols = ops.free_idx
    n = len(cols)
    w2 = np.tile(weights.ravel()[cols], 2)
    B = ops.reg[:, cols]
    reg_block = params.alpha * sp.block_diag([B.T @ B, B.T @ B]).tocsr()

    # J is compared and recorded in extended precision throughout: the float64
    # value is only good to ~1e-12 relative near the minimiser, which is larger
    # than the decrease of the final refinement steps
    _, gr, gs = J_and_grad(pair, params, weights)
    J = _exact_J(pair, params)
    gn = _grad_norm(gr, gs)
    res = MinimizeResult(pair, [(0, float(J), gn)])
    it = 0

    def accept(trial, Jt, gnt):
        nonlocal pair, J, gn, it
        it += 1
        pair, J, gn = trial, Jt, gnt
        res.trace.append((it, float(J), float(gn)))
        if callback is not None:
            callback(it, float(J), float(gn))

    # 1. zero-residual pair: Newton on the square system L1 = L2 = 0
    root = _fit_root(pair, params, ops)
    _, grt, gst = J_and_grad(root, params, weights)
    Jt = _exact_J(root, params)
    if Jt < J:
        accept(root, Jt, _grad_norm(grt, gst))

    # 2. Newton on the multiplier form of ∇J = 0, accepted on decrease of J
    kkt = None
    if gn >= params.grad_tol and it < params.max_iters:
        trial, y, lu, inner = _kkt_solve(pair, params, ops, w2, reg_block)
        res.inner_iterations += inner
        if trial is not None:
            _, grt, gst = J_and_grad(trial, params, weights)
            Jt = _exact_J(trial, params)
            if Jt < J:
                accept(trial, Jt, _grad_norm(grt, gst))
                kkt = lu

    # 3. refinement with extended-precision gradients, reusing the factorisation
    if gn >= params.grad_tol and kkt is not None and it < params.max_iters:
        lu = kkt
        ld = np.longdouble
        wl = residual_weights(pair.grid, params, dtype=ld)
        cur = pair.with_values(pair.r.astype(ld), pair.s.astype(ld))
        _, g_ld = _extended_J_grad(cur, params, wl, cols)
        for _ in range(4):
            step = lu.solve(np.concatenate([np.zeros(2 * n), -0.5 * g_ld.astype(float)]))
            trial = _shift(cur, cols, step[: 2 * n].astype(ld))
            Jt, gt = _extended_J_grad(trial, params, wl, cols)
            gnt = float(np.sqrt(np.sum(gt * gt)))
            if not Jt <= J or it >= params.max_iters:
                break
            cur, g_ld = trial, gt
            accept(trial, Jt, gnt)
            if gnt < params.grad_tol:
                break

    if gn >= params.grad_tol and it < params.max_iters:
        # fall back to damped Gauss-Newton from the best point reached
        rest = params.with_(max_iters=params.max_iters - it)
        start = pair.with_values(np.asarray(pair.r, float), np.asarray(pair.s, float))
        sub = _gauss_newton(start, rest, weights, None)
        Jk = _exact_J(sub.pair, params)
        if Jk < J:
            accept(sub.pair, Jk, sub.final_grad_norm)
    res.pair, res.iterations = pair, it
    res.converged = gn < params.grad_tol
    return res


def _exact_J(pair, params):
    """J evaluated in ``np.longdouble`` (the state itself may be float64)."""
    ld = np.longdouble
    return eval_J(pair.with_values(np.asarray(pair.r, ld), np.asarray(pair.s, ld)), params)


def _extended_J_grad(pair, params, weights_ld, cols):
    """J and its free-node gradient evaluated entirely in ``np.longdouble``."""
    from . import _kernels_py
    from .functional import h2_norm_grad, h2_norm_sq

    ld = np.longdouble
    h, eps, alpha = ld(pair.grid.h), ld(params.eps), ld(params.alpha)
    L1, L2, gr, gs = _kernels_py.fit_gradient(pair.r, pair.s, weights_ld, h, eps)
    J = np.sum(weights_ld * (L1 * L1 + L2 * L2)) + alpha * (h2_norm_sq(pair.r, h) + h2_norm_sq(pair.s, h))
    gr = gr + alpha * h2_norm_grad(pair.r, h)
    gs = gs + alpha * h2_norm_grad(pair.s, h)
    return J, np.concatenate([gr.ravel()[cols], gs.ravel()[cols]])


def _kkt_solve(pair, params, ops, w2, reg_block, max_inner=30):
    """Solve ``L = y / w`` and ``Jacᵀ y + α BᵀB z = 0`` by damped Newton.

    The merit is the Euclidean norm of the stacked equations.  Returns
    ``(pair, y, lu, iterations)`` with ``lu`` the factorised Newton matrix at
    the returned point; ``pair`` is None if a matrix was singular.
    """
    from . import kernels

    cols = ops.free_idx
    n = len(cols)
    h, eps = pair.grid.h, params.eps
    unit = np.ones(n)
    inv_w = sp.diags(1.0 / w2)
    reg_c = ops.reg[:, cols].T

    def equations(p, y):
        L1, L2 = kernels.residuals(p.r, p.s, h, eps)
        F = np.concatenate([L1.ravel()[cols], L2.ravel()[cols]])
        reg_grad = params.alpha * np.concatenate(
            [reg_c @ (ops.reg @ p.r.ravel()), reg_c @ (ops.reg @ p.s.ravel())]
        )
        Jac = _jacobian(p, params, ops, unit)
        return np.concatenate([F - y / w2, Jac.T @ y + reg_grad]), Jac

    def factor(Jac, y):
        C = _curvature_mu(params, ops, y[:n] + y[n:])
        return spla.splu(sp.bmat([[Jac, -inv_w], [C + reg_block, Jac.T]]).tocsc())

    try:
        e, Jac = equations(pair, np.zeros(2 * n))
        # multiplier estimate from the stationarity block at the current point
        y = -spla.splu(Jac.T.tocsc()).solve(e[2 * n:])
        e, Jac = equations(pair, y)
        norm = np.linalg.norm(e)
        k = 0
        for k in range(1, max_inner + 1):
            step = factor(Jac, y).solve(-e)
            t = 1.0
            while t > 1e-6:
                trial = _shift(pair, cols, t * step[: 2 * n])
                yt = y + t * step[2 * n:]
                et, Jact = equations(trial, yt)
                nt = np.linalg.norm(et)
                if nt < norm:
                    break
                t *= 0.5
            else:
                break
            improvement = norm - nt
            pair, y, e, Jac, norm = trial, yt, et, Jact, nt
            if improvement < 1e-3 * norm:
                break
        return pair, y, factor(Jac, y), k
    except RuntimeError:
        return None, None, None, 0
