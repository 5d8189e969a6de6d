"""Forward conductivity problem on the disk G and boundary-trace extraction.

Solves ``div(σ ∇u) = -f(x - x0)`` with ``u = 0`` outside G by the conservative
five-point scheme (face conductivity = arithmetic mean of the two nodes).
The disk boundary is a staircase: nodes with ``|x - c| >= R_G`` carry the
Dirichlet value 0.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import integrate

from .geometry import (
    EXTERIOR,
    GeometryConfig,
    Grid2D,
    SourceSet,
    boundary_indices,
    gamma_indices,
)

__all__ = [
    "ForwardSolveError",
    "Phantom",
    "BoundaryDataset",
    "source_constant",
    "eval_source",
    "source_field",
    "ForwardSolver",
    "solve_forward",
    "solve_all_sources",
    "omega_offsets",
    "trace_reducer",
    "extract_traces",
]


class ForwardSolveError(RuntimeError):
    """The linear solve did not reach the requested residual."""


@lru_cache(maxsize=None)
def source_constant(rho: float) -> float:
    """Normalisation C_ρ making the source bump integrate to one over the plane."""
    # ∫_{|x|<ρ} exp(-|x|²/(ρ²-|x|²)) dx = 2πρ² ∫_0^1 exp(-t²/(1-t²)) t dt
    val, _ = integrate.quad(
        lambda t: math.exp(-t * t / (1.0 - t * t)) * t if t < 1.0 else 0.0,
        0.0,
        1.0,
        epsabs=0.0,
        epsrel=1e-13,
        limit=200,
    )
    return 1.0 / (2.0 * math.pi * rho * rho * val)


def eval_source(x, x0, rho: float):
    """Smooth compactly supported source bump centred at ``x0``.

    ``x`` may be a point ``(x, y)`` or a pair of coordinate arrays.  Returns
    ``C_ρ exp(-|x-x0|²/(ρ²-|x-x0|²))`` inside the disk of radius ρ, else 0.
    """
    if not 0 < rho < 1:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    X = np.asarray(x[0], dtype=float)
    Y = np.asarray(x[1], dtype=float)
    d2 = (X - x0[0]) ** 2 + (Y - x0[1]) ** 2
    inside = d2 < rho * rho
    out = np.zeros(np.broadcast(X, Y).shape)
    if not out.ndim:
        if not inside:
            return 0.0
        return float(source_constant(rho) * math.exp(-d2 / (rho * rho - d2)))
    dd = d2[inside]
    out[inside] = source_constant(rho) * np.exp(-dd / (rho * rho - dd))
    return out


def source_field(grid: Grid2D, x0, rho: float) -> np.ndarray:
    X, Y = grid.mesh()
    return eval_source((X, Y), x0, rho)


@dataclass
class Phantom:
    """Conductivity on the G grid.

    ``inclusion`` marks the nodes of the unsmoothed inclusion (may be all
    False for a homogeneous medium).
    """

    sigma: np.ndarray
    grid: Grid2D
    inclusion: np.ndarray
    sigma_a: float = 1.0
    name: str = ""

    def __post_init__(self):
        if self.sigma.shape != self.grid.shape:
            raise ValueError("sigma does not match the grid shape")
        if not np.all(np.isfinite(self.sigma)):
            raise ValueError("sigma must be finite")
        if self.sigma.min() < 1.0 - 1e-12:
            raise ValueError(f"sigma must be >= 1, min is {self.sigma.min()}")


class ForwardSolver:
    """Discrete operator ``-div(σ∇·)`` on the active nodes of a G grid.

    With ``method="direct"`` the matrix is factorised once and reused for every
    source; ``method="cg"`` runs Jacobi-preconditioned conjugate gradients.
    """

    def __init__(self, sigma: np.ndarray, grid: Grid2D, mask: np.ndarray,
                 method: str = "direct", rtol: float = 1e-10):
        if method not in ("direct", "cg"):
            raise ValueError(f"unknown linear solver {method!r}")
        self.grid = grid
        self.mask = mask
        self.method = method
        self.rtol = rtol
        self.active = mask != EXTERIOR
        self.index = np.full(grid.shape, -1, dtype=np.int64)
        self.index[self.active] = np.arange(int(self.active.sum()))
        self.matrix = self._assemble(np.asarray(sigma, dtype=float))
        self.maxiter = int(50 * math.sqrt(grid.nx * grid.ny))
        self._lu = None
        if method == "direct":
            self._lu = spla.splu(self.matrix.tocsc(), permc_spec="MMD_AT_PLUS_A")
        else:
            self._jacobi = sp.diags(1.0 / self.matrix.diagonal())

    def _assemble(self, sigma: np.ndarray) -> sp.csr_matrix:
        h2 = self.grid.h ** 2
        n = int(self.active.sum())
        diag = np.zeros(n)
        rows, cols, vals = [], [], []
        idx = self.index
        for axis in (0, 1):
            sl_p = [slice(None), slice(None)]
            sl_q = [slice(None), slice(None)]
            sl_p[axis] = slice(0, -1)
            sl_q[axis] = slice(1, None)
            p, q = idx[tuple(sl_p)], idx[tuple(sl_q)]
            face = 0.5 * (sigma[tuple(sl_p)] + sigma[tuple(sl_q)]) / h2
            np.add.at(diag, p[p >= 0], face[p >= 0])
            np.add.at(diag, q[q >= 0], face[q >= 0])
            both = (p >= 0) & (q >= 0)
            rows += [p[both], q[both]]
            cols += [q[both], p[both]]
            vals += [-face[both], -face[both]]
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        vals.append(diag)
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve with right-hand side ``rhs`` (a full grid array); returns u on the grid."""
        b = np.asarray(rhs, dtype=float)[self.active]
        bnorm = np.linalg.norm(b)
        u = np.zeros(self.grid.shape)
        if bnorm == 0.0:
            return u
        if self._lu is not None:
            x = self._lu.solve(b)
        else:
            x, info = spla.cg(self.matrix, b, rtol=self.rtol, atol=0.0,
                              maxiter=self.maxiter, M=self._jacobi)
            if info != 0:
                res = np.linalg.norm(self.matrix @ x - b) / bnorm
                raise ForwardSolveError(f"CG stopped after {info} iterations, residual {res:.3e}")
        res = np.linalg.norm(self.matrix @ x - b) / bnorm
        if res > self.rtol:
            raise ForwardSolveError(f"relative residual {res:.3e} exceeds {self.rtol:.1e}")
        u[self.active] = x
        return u

    def solve_source(self, x0, rho: float) -> np.ndarray:
        return self.solve(source_field(self.grid, x0, rho))


def solve_forward(phantom: Phantom, x0, mask: np.ndarray, rho: float = 0.1,
                  method: str = "direct") -> np.ndarray:
    """Potential u on the G grid for a single source position ``x0``."""
    return ForwardSolver(phantom.sigma, phantom.grid, mask, method).solve_source(x0, rho)


def solve_all_sources(solver: ForwardSolver, sources: SourceSet, rho: float,
                      threads: int = 1, reduce=None) -> list:
    """Solve for every source angle, in ascending φ order.

    ``reduce`` maps each full potential to what is kept (e.g. the traces),
    which avoids holding every field in memory.
    """
    reduce = reduce or (lambda u: u)

    def one(phi):
        return reduce(solver.solve_source(sources.position(phi), rho))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, sources.phi))
    return [one(phi) for phi in sources.phi]


@dataclass
class BoundaryDataset:
    """Dirichlet traces ``g0`` on ∂Ω and Neumann traces ``g1`` on Γ.

    ``g0`` has shape ``(n_boundary, N)`` in the counterclockwise traversal of
    :func:`eitcvx.geometry.boundary_indices`; ``g1`` has shape ``(n_gamma, N)``
    ordered bottom to top.  Columns follow ascending φ.
    """

    g0: np.ndarray
    g1: np.ndarray
    phi: np.ndarray
    h_phi: float
    omega_shape: tuple[int, int]
    delta: float = 0.0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        nx, ny = self.omega_shape
        nb = 2 * (nx + ny) - 4
        if self.g0.shape != (nb, len(self.phi)):
            raise ValueError(f"g0 has shape {self.g0.shape}, expected {(nb, len(self.phi))}")
        if self.g1.shape != (ny - 2, len(self.phi)):
            raise ValueError(f"g1 has shape {self.g1.shape}, expected {(ny - 2, len(self.phi))}")


def omega_offsets(cfg: GeometryConfig, ggrid: Grid2D, h_omega: float) -> tuple[int, int, int, int, int]:
    """Locate the Ω grid inside the G grid by node coincidence.

    Returns ``(i0, j0, step, nx, ny)``: Ω node (p, q) is G node
    ``(i0 + step p, j0 + step q)``.
    """
    ratio = h_omega / ggrid.h
    step = round(ratio)
    if step < 1 or abs(ratio - step) > 1e-9 * ratio:
        raise ValueError(f"Omega spacing {h_omega} is not an integer multiple of G spacing {ggrid.h}")
    xmin, xmax, ymin, ymax = cfg.omega_box
    i0, j0 = ggrid.index_of(xmin, ymin)
    i1, j1 = ggrid.index_of(xmax, ymax)
    if (i1 - i0) % step or (j1 - j0) % step:
        raise ValueError("Omega side lengths are not multiples of the Omega spacing")
    return i0, j0, step, (i1 - i0) // step + 1, (j1 - j0) // step + 1


def trace_reducer(offsets):
    """Closure mapping a G-grid potential to its (g0 column, g1 column)."""
    i0, j0, step, nx, ny = offsets
    bi, bj = boundary_indices(nx, ny)
    gi, gj = gamma_indices(nx, ny)
    Bi, Bj = i0 + step * bi, j0 + step * bj
    Gi, Gj = i0 + step * gi, j0 + step * gj

    def reduce(u):
        return u[Bi, Bj].copy(), u[Gi + 1, Gj] - u[Gi - 1, Gj]

    return reduce


def extract_traces(potentials, offsets, ggrid: Grid2D, sources: SourceSet) -> BoundaryDataset:
    """Assemble g0 and g1 from potentials (full G fields or reduced pairs).

    g1 is the outward (+x) normal derivative on Γ, taken as the second-order
    central difference over the G spacing.
    """
    if len(potentials) != len(sources):
        raise ValueError(f"got {len(potentials)} potentials for {len(sources)} source angles")
    reduce = trace_reducer(offsets)
    cols0, cols1 = [], []
    for k, item in enumerate(potentials):
        if item is None:
            raise ValueError(f"missing potential for phi index {k}")
        c0, c1 = reduce(item) if isinstance(item, np.ndarray) else item
        cols0.append(c0)
        cols1.append(c1 / (2.0 * ggrid.h))
    _, _, _, nx, ny = offsets
    return BoundaryDataset(
        g0=np.column_stack(cols0),
        g1=np.column_stack(cols1),
        phi=np.asarray(sources.phi, dtype=float).copy(),
        h_phi=sources.h_phi,
        omega_shape=(nx, ny),
    )
