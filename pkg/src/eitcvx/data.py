"""Boundary-data preparation: noise, φ-differentiation, logarithmic transform."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .forward import BoundaryDataset

__all__ = [
    "DataError",
    "TransformedBoundary",
    "add_noise",
    "spline_phi_derivative",
    "gamma_in_boundary",
    "log_transform",
]


class DataError(ValueError):
    pass


def add_noise(data: BoundaryDataset, delta: float, seed: int, per_phi: bool = False) -> BoundaryDataset:
    """Multiplicative uniform noise ``g (1 + δ ξ)`` with ξ ~ U[-1, 1].

    By default one ξ is drawn per boundary node and shared by every source
    angle; ``per_phi=True`` draws independently for each (node, φ).
    """
    if not 0 <= delta < 1:
        raise DataError(f"noise level must lie in [0, 1), got {delta}")
    rng = np.random.default_rng(seed)
    n0, N = data.g0.shape
    n1 = data.g1.shape[0]
    cols = N if per_phi else 1
    xi0 = rng.uniform(-1.0, 1.0, size=(n0, cols))
    xi1 = rng.uniform(-1.0, 1.0, size=(n1, cols))
    meta = dict(data.meta, noise_per_phi=per_phi)
    return replace(
        data,
        g0=data.g0 * (1.0 + delta * xi0),
        g1=data.g1 * (1.0 + delta * xi1),
        delta=float(delta),
        seed=seed,
        meta=meta,
    )


def spline_phi_derivative(values, phi, periodic: bool = False) -> np.ndarray:
    """Derivative in φ of the cubic spline through ``values`` (last axis = φ).

    Natural end conditions by default.  With ``periodic=True`` the sample at
    φ_1 is repeated at φ_1 + 2π and a periodic spline is used instead.
    """
    values = np.asarray(values, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if phi.size < 4:
        raise DataError("need at least 4 phi samples")
    steps = np.diff(phi)
    if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps.mean():
        raise DataError("phi grid must be uniform and increasing")
    if periodic:
        x = np.append(phi, phi[0] + 2.0 * np.pi)
        y = np.concatenate([values, values[..., :1]], axis=-1)
        spline = CubicSpline(x, y, axis=-1, bc_type="periodic")
    else:
        spline = CubicSpline(phi, values, axis=-1, bc_type="natural")
    return spline.derivative()(phi)


def gamma_in_boundary(nx: int, ny: int) -> np.ndarray:
    """Positions of the Γ nodes inside the counterclockwise ∂Ω traversal."""
    return nx - 1 + np.arange(1, ny - 1)


@dataclass
class TransformedBoundary:
    """Log-transformed data and the boundary arrays of the (r, s) system.

    All arrays have φ on the last axis.  Dirichlet arrays live on ∂Ω,
    Neumann arrays on Γ.
    """

    s0: np.ndarray
    s1: np.ndarray
    ds0: np.ndarray
    ds1: np.ndarray
    eps: float
    phi: np.ndarray
    h_phi: float

    @property
    def r_dirichlet(self):
        return self.ds0

    @property
    def r_neumann(self):
        return self.ds1

    @property
    def q_dirichlet(self):
        return self.ds0 - self.eps * self.s0

    @property
    def q_neumann(self):
        return self.ds1 - self.eps * self.s1

    def at(self, k: int):
        """The four boundary arrays for source index ``k``."""
        return (self.r_dirichlet[:, k], self.r_neumann[:, k],
                self.q_dirichlet[:, k], self.q_neumann[:, k])


def log_transform(data: BoundaryDataset, eps: float, periodic: bool = False) -> TransformedBoundary:
    """``s0 = ln g0``, ``s1 = g1 / g0`` and their φ-derivatives."""
    g0 = np.asarray(data.g0, dtype=float)
    bad = np.argwhere(~(g0 > 0))
    if bad.size:
        node, k = bad[0]
        raise DataError(
            f"nonpositive Dirichlet datum {g0[node, k]:.3e} at boundary node {node}, "
            f"phi index {k}: noise too large or geometry violated"
        )
    nx, ny = data.omega_shape
    s0 = np.log(g0)
    s1 = data.g1 / g0[gamma_in_boundary(nx, ny)]
    ds0 = spline_phi_derivative(s0, data.phi, periodic)
    ds1 = spline_phi_derivative(s1, data.phi, periodic)
    return TransformedBoundary(s0, s1, ds0, ds1, float(eps), np.asarray(data.phi), data.h_phi)
