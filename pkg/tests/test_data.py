import math

import numpy as np
import pytest

from eitcvx.data import (
    DataError,
    add_noise,
    gamma_in_boundary,
    log_transform,
    spline_phi_derivative,
)
from eitcvx.forward import BoundaryDataset
from eitcvx.geometry import boundary_indices, gamma_indices


def _dataset(nx=11, ny=11, N=16, seed=0):
    rng = np.random.default_rng(seed)
    nb = 2 * (nx + ny) - 4
    phi = 2 * math.pi / (N + 1) * np.arange(1, N + 1)
    g0 = 1.0 + rng.uniform(0.1, 1.0, (nb, N))
    g1 = rng.normal(size=(ny - 2, N))
    return BoundaryDataset(g0, g1, phi, 2 * math.pi / (N + 1), (nx, ny))


def test_noise_reproducible_and_bounded():
    d = _dataset()
    a = add_noise(d, 0.03, seed=11)
    b = add_noise(d, 0.03, seed=11)
    c = add_noise(d, 0.03, seed=12)
    assert np.array_equal(a.g0, b.g0) and np.array_equal(a.g1, b.g1)
    assert not np.array_equal(a.g0, c.g0)
    rel = a.g0 / d.g0 - 1
    assert np.all(np.abs(rel) <= 0.03)
    assert a.delta == 0.03 and a.seed == 11


def test_noise_shared_across_phi_by_default():
    d = _dataset()
    rel = add_noise(d, 0.05, seed=3).g0 / d.g0
    assert np.allclose(rel, rel[:, :1])
    relp = add_noise(d, 0.05, seed=3, per_phi=True).g0 / d.g0
    assert not np.allclose(relp, relp[:, :1])


def test_noise_level_checked():
    with pytest.raises(DataError):
        add_noise(_dataset(), 1.0, seed=0)


def test_zero_noise_identity():
    d = _dataset()
    assert np.array_equal(add_noise(d, 0.0, seed=5).g0, d.g0)


def test_spline_derivative_accuracy():
    N = 64
    phi = 2 * math.pi / (N + 1) * np.arange(1, N + 1)
    vals = np.vstack([np.sin(phi), np.cos(2 * phi)])
    d = spline_phi_derivative(vals, phi)
    exact = np.vstack([np.cos(phi), -2 * np.sin(2 * phi)])
    mid = slice(5, -5)
    assert np.max(np.abs(d[:, mid] - exact[:, mid])) < 1e-3
    dp = spline_phi_derivative(vals, phi, periodic=True)
    assert np.max(np.abs(dp - exact)) < 1e-3


def test_spline_rejects_bad_grid():
    with pytest.raises(DataError):
        spline_phi_derivative(np.ones(3), np.arange(3.0))
    with pytest.raises(DataError):
        spline_phi_derivative(np.ones(5), np.array([0, 1, 2, 4, 5.0]))


def test_gamma_positions_in_traversal():
    nx, ny = 7, 6
    bi, bj = boundary_indices(nx, ny)
    gi, gj = gamma_indices(nx, ny)
    pos = gamma_in_boundary(nx, ny)
    assert np.array_equal(bi[pos], gi) and np.array_equal(bj[pos], gj)


def test_log_transform():
    d = _dataset()
    eps = 0.0002
    tb = log_transform(d, eps)
    assert np.allclose(tb.s0, np.log(d.g0))
    pos = gamma_in_boundary(11, 11)
    assert np.allclose(tb.s1, d.g1 / d.g0[pos])
    rd, rn, qd, qn = tb.at(3)
    assert np.allclose(qd, tb.ds0[:, 3] - eps * tb.s0[:, 3])
    assert np.allclose(qn, tb.ds1[:, 3] - eps * tb.s1[:, 3])


def test_log_transform_rejects_nonpositive():
    d = _dataset()
    d.g0[4, 2] = -1e-3
    with pytest.raises(DataError, match="node 4, phi index 2"):
        log_transform(d, 0.0002)
