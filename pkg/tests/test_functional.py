import math

import numpy as np
import pytest

from eitcvx.experiment import random_pair
from eitcvx.functional import (
    ConvexParams,
    PairField,
    J_and_grad,
    carleman_weight,
    convexity_probe,
    eval_J,
    eval_L1,
    eval_L2,
    free_mask,
    h2_norm_grad,
    h2_norm_sq,
    residual_weights,
)
from eitcvx.geometry import boundary_indices, gamma_indices


def test_params_validation():
    ConvexParams()
    for bad in ({"lam": -1}, {"alpha": 0}, {"eps": 1.5}, {"gamma": 0}, {"grad_tol": 0}, {"method": "bfgs"}):
        with pytest.raises(ValueError):
            ConvexParams(**bad)
    assert ConvexParams().with_(lam=0.0).lam == 0.0


def test_free_mask_layout():
    m = free_mask(6, 5)
    assert m.sum() == 3 * 3
    assert not m[4].any()           # column next to Γ is fixed by the Neumann datum
    assert not m[0].any() and not m[:, 0].any() and not m[:, -1].any()


def test_constraints(omega21, rng):
    p = random_pair(omega21, rng, 0.0002)
    nx, ny = omega21.shape
    bi, bj = boundary_indices(nx, ny)
    gi, gj = gamma_indices(nx, ny)
    assert np.array_equal(p.r[bi, bj], p.r_dirichlet)
    assert np.allclose((p.r[gi, gj] - p.r[gi - 1, gj]) / omega21.h, p.r_neumann)
    q = p.copy()
    q.r[:] = 0
    q.apply_constraints()
    assert np.array_equal(q.r[bi, bj], p.r_dirichlet)
    assert np.allclose(q.r[gi - 1, gj], p.r[gi - 1, gj])
    assert p.same_constraints(q)


def test_carleman_weight():
    assert carleman_weight(1.0, 3.0) == pytest.approx(math.exp(6))
    assert carleman_weight(2.0, 0.0) == 1.0
    with pytest.raises(OverflowError):
        carleman_weight(2.0, 100.0)


def test_residual_weights(omega21, desk_params):
    w = residual_weights(omega21, desk_params)
    X, _ = omega21.mesh()
    exp = math.sqrt(0.0002) * np.exp(6 * X**2) * omega21.h**2
    free = free_mask(*omega21.shape)
    assert np.allclose(w[free], exp[free]) and np.all(w[~free] == 0)
    wl = residual_weights(omega21, desk_params, dtype=np.longdouble)
    assert wl.dtype == np.longdouble and np.allclose(wl.astype(float), w)


def test_h2_norm_gradient(rng):
    u = rng.normal(size=(8, 7))
    h = 0.2
    g = h2_norm_grad(u, h)
    t = 1e-6
    for idx in [(0, 0), (3, 4), (7, 6), (2, 1)]:
        up, um = u.copy(), u.copy()
        up[idx] += t
        um[idx] -= t
        assert g[idx] == pytest.approx((h2_norm_sq(up, h) - h2_norm_sq(um, h)) / (2 * t), rel=1e-6)


def test_h2_norm_of_linear_function():
    h = 0.1
    x = h * np.arange(11)
    u = np.add.outer(2 * x, 3 * x)
    # u² + |∇u|² with vanishing second differences
    expect = h * h * (np.sum(u * u) + 4 * 10 * 11 + 9 * 11 * 10)
    assert h2_norm_sq(u, h) == pytest.approx(expect, rel=1e-12)


def test_residuals_vanish_off_free(omega21, rng):
    p = random_pair(omega21, rng, 0.0002)
    free = p.free
    assert np.all(eval_L1(p, 0.0002)[~free] == 0)
    assert np.all(eval_L2(p, 0.0002)[~free] == 0)


def test_gradient_matches_longdouble_fd(omega21, rng, desk_params):
    p = random_pair(omega21, rng, desk_params.eps, amp=0.5)
    J, gr, gs = J_and_grad(p, desk_params)
    assert J == pytest.approx(eval_J(p, desk_params), rel=1e-12)
    pl = p.with_values(p.r.astype(np.longdouble), p.s.astype(np.longdouble))
    t = 1e-6
    free = np.argwhere(p.free)
    pick = free[rng.choice(len(free), 6, replace=False)]
    fd, an = [], []
    for arr, g in (("r", gr), ("s", gs)):
        for i, j in pick:
            plus, minus = pl.copy(), pl.copy()
            getattr(plus, arr)[i, j] += np.longdouble(t)
            getattr(minus, arr)[i, j] -= np.longdouble(t)
            fd.append(float((eval_J(plus, desk_params) - eval_J(minus, desk_params)) / np.longdouble(2 * t)))
            an.append(g[i, j])
    fd, an = np.array(fd), np.array(an)
    assert np.linalg.norm(fd - an) <= 1e-6 * np.linalg.norm(an)
    assert np.all(gr[~p.free] == 0)


def test_gradient_zero_off_free(omega21, rng, desk_params):
    p = random_pair(omega21, rng, desk_params.eps)
    _, gr, gs = J_and_grad(p, desk_params)
    assert np.all(gr[~p.free] == 0) and np.all(gs[~p.free] == 0)


def test_convexity_probe(omega21, rng, desk_params):
    p1 = random_pair(omega21, rng, desk_params.eps)
    p2 = p1.copy()
    p2.r[p1.free] += 0.1 * rng.normal(size=int(p1.free.sum()))
    gap = convexity_probe(p1, p2, desk_params)
    bound = desk_params.alpha * h2_norm_sq(p2.r - p1.r, omega21.h)
    assert gap >= bound
    assert convexity_probe(p1, p1, desk_params) == pytest.approx(0.0, abs=1e-9 * eval_J(p1, desk_params))
    other = random_pair(omega21, rng, desk_params.eps)
    with pytest.raises(ValueError):
        convexity_probe(p1, other, desk_params)


def test_from_boundary_defaults(omega21):
    nx, ny = omega21.shape
    nb = 2 * (nx + ny) - 4
    p = PairField.from_boundary(omega21, np.ones(nb), np.zeros(ny - 2), np.ones(nb), np.zeros(ny - 2))
    assert np.all(p.r[~p.free & (p.r != 0)] == 1.0)
    assert eval_J(p, ConvexParams()) > 0
