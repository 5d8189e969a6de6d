"""Pure-numpy reference kernels (fallback when the compiled module is absent)."""
import numpy as np


def residuals(r, s, h, eps):
    """L1, L2 on the interior nodes of the grid; zero on the outer ring."""
    L1 = np.zeros_like(r)
    L2 = np.zeros_like(r)
    c = (slice(1, -1), slice(1, -1))
    inv_h2 = 1.0 / (h * h)
    inv_2h = 0.5 / h
    lap_r = (r[2:, 1:-1] + r[:-2, 1:-1] + r[1:-1, 2:] + r[1:-1, :-2] - 4.0 * r[c]) * inv_h2
    lap_s = (s[2:, 1:-1] + s[:-2, 1:-1] + s[1:-1, 2:] + s[1:-1, :-2] - 4.0 * s[c]) * inv_h2
    rx = (r[2:, 1:-1] - r[:-2, 1:-1]) * inv_2h
    ry = (r[1:-1, 2:] - r[1:-1, :-2]) * inv_2h
    sx = (s[2:, 1:-1] - s[:-2, 1:-1]) * inv_2h
    sy = (s[1:-1, 2:] - s[1:-1, :-2]) * inv_2h
    adv = 2.0 * (rx * (rx - sx) + ry * (ry - sy)) / eps
    L1[c] = lap_r + adv
    L2[c] = lap_s + adv
    return L1, L2


def fit_gradient(r, s, psiw, h, eps):
    """Residuals and the gradient of ``sum(psiw * (L1² + L2²))`` in (r, s).

    ``psiw`` carries the per-node weight and must vanish on the outer ring.
    Returns ``(L1, L2, grad_r, grad_s)``; the gradient covers every node.
    """
    L1, L2 = residuals(r, s, h, eps)
    A1 = 2.0 * psiw * L1
    A2 = 2.0 * psiw * L2
    c = (slice(1, -1), slice(1, -1))
    inv_h2 = 1.0 / (h * h)
    inv_2h = 0.5 / h
    rx = (r[2:, 1:-1] - r[:-2, 1:-1]) * inv_2h
    ry = (r[1:-1, 2:] - r[1:-1, :-2]) * inv_2h
    sx = (s[2:, 1:-1] - s[:-2, 1:-1]) * inv_2h
    sy = (s[1:-1, 2:] - s[1:-1, :-2]) * inv_2h
    T = 2.0 * (A1[c] + A2[c]) / eps
    # δadv = (2/ε)[∇δr·(2∇r - ∇s) - ∇r·∇δs]
    cxr = T * (2.0 * rx - sx)
    cyr = T * (2.0 * ry - sy)
    cxs = -T * rx
    cys = -T * ry
    gr = np.zeros_like(r)
    gs = np.zeros_like(r)
    for g, A, cx, cy in ((gr, A1, cxr, cyr), (gs, A2, cxs, cys)):
        a = A[c] * inv_h2
        g[c] -= 4.0 * a
        g[2:, 1:-1] += a
        g[:-2, 1:-1] += a
        g[1:-1, 2:] += a
        g[1:-1, :-2] += a
        g[2:, 1:-1] += cx * inv_2h
        g[:-2, 1:-1] -= cx * inv_2h
        g[1:-1, 2:] += cy * inv_2h
        g[1:-1, :-2] -= cy * inv_2h
    return L1, L2, gr, gs
