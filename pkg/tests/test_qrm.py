import math

import numpy as np
import pytest

from eitcvx.geometry import omega_grid
from eitcvx.qrm import (
    QrmError,
    centroid,
    contrast,
    eval_K,
    grad_K,
    high_region,
    minimize_K,
    qrm_free_mask,
    relative_l2,
    sigma_from_V,
)


def _bump_V(grid, amp=0.4):
    X, Y = grid.mesh()
    r2 = ((X - 1.5) ** 2 + (Y - 1.45) ** 2) / 0.3**2
    b = np.where(r2 < 1, np.exp(-1 / np.maximum(1 - r2, 1e-300)) * math.e, 0.0)
    return 1 + amp * b


def _discrete_a(V, h):
    a = np.zeros_like(V)
    lap = (V[2:, 1:-1] + V[:-2, 1:-1] + V[1:-1, 2:] + V[1:-1, :-2] - 4 * V[1:-1, 1:-1]) / h**2
    a[1:-1, 1:-1] = lap / V[1:-1, 1:-1]
    return a


def test_exact_discrete_a_is_recovered(omega21):
    V = _bump_V(omega21)
    a = _discrete_a(V, omega21.h)
    assert eval_K(V, a, omega21.h) == pytest.approx(0.0, abs=1e-18)
    Vm = minimize_K(a, omega21)
    assert np.max(np.abs(Vm - V)) < 1e-9


def test_grad_K_fd(omega21, rng):
    V = _bump_V(omega21)
    a = rng.normal(size=V.shape)
    g = grad_K(V, a, omega21.h)
    t = 1e-6
    for idx in [(5, 5), (2, 10), (18, 3)]:
        Vp, Vm = V.copy(), V.copy()
        Vp[idx] += t
        Vm[idx] -= t
        fd = (eval_K(Vp, a, omega21.h) - eval_K(Vm, a, omega21.h)) / (2 * t)
        assert g[idx] == pytest.approx(fd, rel=1e-5)
    assert np.all(g[~qrm_free_mask(*V.shape)] == 0)


def test_minimizer_is_stationary(omega21, rng):
    a = 5 * rng.normal(size=omega21.shape)
    V = minimize_K(a, omega21)
    assert np.all(V[~qrm_free_mask(*V.shape)] == 1.0)
    g = grad_K(V, a, omega21.h)
    assert np.max(np.abs(g)) < 1e-8 * max(1.0, eval_K(np.ones_like(V), a, omega21.h))


def test_qrm_errors(omega21):
    with pytest.raises(QrmError):
        eval_K(np.zeros(omega21.shape), np.zeros(omega21.shape), omega21.h)
    with pytest.raises(QrmError):
        minimize_K(np.zeros((3, 3)), omega21)
    bad = np.zeros(omega21.shape)
    bad[4, 4] = np.nan
    with pytest.raises(QrmError):
        minimize_K(bad, omega21)


def test_zero_a_gives_one(omega21):
    V = minimize_K(np.zeros(omega21.shape), omega21)
    assert np.allclose(V, 1.0)


def test_metrics(omega21):
    V = _bump_V(omega21)
    sigma = sigma_from_V(V)
    assert np.allclose(sigma, V**2)
    inc = sigma > 1.5
    assert contrast(sigma, inc) == pytest.approx(sigma.max())
    assert contrast(sigma) == pytest.approx(sigma.max())
    hr = high_region(sigma)
    cx, cy = centroid(hr, omega21)
    assert cx == pytest.approx(1.5, abs=1e-9) and cy == pytest.approx(1.45, abs=0.03)
    assert math.isnan(centroid(np.zeros(sigma.shape, bool), omega21)[0])
    assert not high_region(np.ones((5, 5))).any()
    assert relative_l2(sigma, sigma) == 0.0
