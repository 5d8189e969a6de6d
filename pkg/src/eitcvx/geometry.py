"""Domain layout and uniform grids.

The layout is a nested set of planar regions::

    G (disk, forward domain)  ⊃  D_A (disk of sources)  ⊃  Ω (rectangle)

with sources running along the circle C_A = ∂D_A and the measurement side
Γ being the right edge ``x = a + c1`` of Ω.  Arrays on every grid are indexed
``[i, j]`` with ``i`` along x and ``j`` along y.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GeometryError",
    "GeometryConfig",
    "Grid2D",
    "SourceSet",
    "INTERIOR",
    "DIRICHLET",
    "GAMMA",
    "EXTERIOR",
    "validate_geometry",
    "source_positions",
    "build_grid",
    "omega_grid",
    "g_grid",
    "boundary_indices",
    "gamma_indices",
]

INTERIOR, DIRICHLET, GAMMA, EXTERIOR = 0, 1, 2, 3

_SNAP_TOL = 1e-9


class GeometryError(ValueError):
    """Raised when a geometry or grid request is inconsistent."""


@dataclass(frozen=True)
class GeometryConfig:
    a: float = 1.5
    b: float = 1.5
    A: float = 2.0
    c1: float = 0.5
    c2: float = 0.5
    R_G: float = 3.0
    G_center: tuple[float, float] = (1.5, 1.5)
    rho: float = 0.1

    @property
    def omega_box(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the rectangle Ω."""
        return (self.a - self.c1, self.a + self.c1, self.b - self.c2, self.b + self.c2)

    @property
    def g_box(self) -> tuple[float, float, float, float]:
        gx, gy = self.G_center
        return (gx - self.R_G, gx + self.R_G, gy - self.R_G, gy + self.R_G)


def validate_geometry(cfg: GeometryConfig) -> GeometryConfig:
    """Check the placement conditions and return ``cfg`` unchanged.

    Raises
    ------
    GeometryError
        With a message naming the first violated condition.
    """
    for name in ("A", "c1", "c2", "R_G", "rho"):
        if not getattr(cfg, name) > 0:
            raise GeometryError(f"{name} must be positive, got {getattr(cfg, name)}")
    half_diag = math.hypot(cfg.c1, cfg.c2)
    if not half_diag < cfg.A:
        raise GeometryError(
            f"Omega not inside D_A: sqrt(c1^2 + c2^2) = {half_diag:.6g} >= A = {cfg.A:.6g}"
        )
    gx, gy = cfg.G_center
    # D_A ⊂ G with C_A strictly away from ∂G
    if not math.hypot(cfg.a - gx, cfg.b - gy) + cfg.A < cfg.R_G:
        raise GeometryError("D_A not inside G: source circle meets or leaves the disk G")
    if not cfg.a - cfg.c1 > 0:
        raise GeometryError(
            f"Omega touches the line x = 0: a - c1 = {cfg.a - cfg.c1:.6g} <= 0"
        )
    if not (cfg.rho < 1 and cfg.rho < cfg.A - half_diag):
        raise GeometryError(
            f"rho = {cfg.rho:.6g} too large: need rho < 1 and rho < A - sqrt(c1^2 + c2^2)"
        )
    return cfg


@dataclass(frozen=True)
class SourceSet:
    """Source angles φ_n = n h_φ, n = 1..N, on the circle C_A."""

    phi: np.ndarray
    h_phi: float
    center: tuple[float, float]
    radius: float

    def __len__(self) -> int:
        return len(self.phi)

    def position(self, phi: float) -> tuple[float, float]:
        return (
            self.center[0] + self.radius * math.cos(phi),
            self.center[1] + self.radius * math.sin(phi),
        )

    @property
    def positions(self) -> np.ndarray:
        return np.column_stack(
            [
                self.center[0] + self.radius * np.cos(self.phi),
                self.center[1] + self.radius * np.sin(self.phi),
            ]
        )


def source_positions(cfg: GeometryConfig, N: int) -> SourceSet:
    """Uniform open grid of ``N`` source angles in (0, 2π), h_φ = 2π/(N+1)."""
    if N < 4:
        raise GeometryError(f"need at least 4 sources, got {N}")
    h_phi = 2.0 * math.pi / (N + 1)
    phi = h_phi * np.arange(1, N + 1)
    return SourceSet(phi=phi, h_phi=h_phi, center=(cfg.a, cfg.b), radius=cfg.A)


@dataclass(frozen=True)
class Grid2D:
    origin: tuple[float, float]
    h: float
    nx: int
    ny: int

    def __post_init__(self):
        if not self.h > 0:
            raise GeometryError("grid spacing must be positive")
        if self.nx < 5 or self.ny < 5:
            raise GeometryError(f"grid too small: {self.nx}x{self.ny} (need >= 5x5)")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def x(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def index_of(self, x: float, y: float) -> tuple[int, int]:
        """Node indices of the point (x, y), which must sit on a node."""
        fi = (x - self.origin[0]) / self.h
        fj = (y - self.origin[1]) / self.h
        i, j = round(fi), round(fj)
        if abs(fi - i) > _SNAP_TOL * max(1.0, abs(fi)) or abs(fj - j) > _SNAP_TOL * max(1.0, abs(fj)):
            raise GeometryError(f"point ({x}, {y}) is not a grid node")
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise GeometryError(f"point ({x}, {y}) lies outside the grid")
        return i, j


def _cells(length: float, h: float, what: str) -> int:
    n = length / h
    k = round(n)
    if k < 1 or abs(n - k) > _SNAP_TOL * max(1.0, n):
        raise GeometryError(f"spacing {h} does not divide {what} length {length}")
    return k


def build_grid(box, h, *, omega=None, disk=None) -> tuple[Grid2D, np.ndarray]:
    """Uniform grid over ``box`` with a node classification mask.

    Parameters
    ----------
    box : (xmin, xmax, ymin, ymax)
    h : float
        Spacing; must divide both box side lengths exactly.
    omega : (xmin, xmax, ymin, ymax), optional
        Rectangle whose edges must fall on grid lines.  Its boundary nodes are
        marked ``DIRICHLET`` and the open right edge ``GAMMA``.
    disk : ((cx, cy), R), optional
        Nodes with ``|x - c| >= R`` are marked ``EXTERIOR``.
    """
    xmin, xmax, ymin, ymax = box
    nx = _cells(xmax - xmin, h, "box x") + 1
    ny = _cells(ymax - ymin, h, "box y") + 1
    grid = Grid2D(origin=(xmin, ymin), h=h, nx=nx, ny=ny)
    mask = np.full(grid.shape, INTERIOR, dtype=np.int8)
    if disk is not None:
        (cx, cy), R = disk
        X, Y = grid.mesh()
        mask[(X - cx) ** 2 + (Y - cy) ** 2 >= R * R] = EXTERIOR
    if omega is not None:
        oxmin, oxmax, oymin, oymax = omega
        _cells(oxmax - oxmin, h, "Omega x")
        _cells(oymax - oymin, h, "Omega y")
        i0, j0 = grid.index_of(oxmin, oymin)
        i1, j1 = grid.index_of(oxmax, oymax)
        mask[i0 : i1 + 1, j0] = DIRICHLET
        mask[i0 : i1 + 1, j1] = DIRICHLET
        mask[i0, j0 : j1 + 1] = DIRICHLET
        mask[i1, j0 : j1 + 1] = DIRICHLET
        mask[i1, j0 + 1 : j1] = GAMMA
    return grid, mask


def omega_grid(cfg: GeometryConfig, h: float) -> tuple[Grid2D, np.ndarray]:
    """Grid covering exactly the closed rectangle Ω."""
    box = cfg.omega_box
    return build_grid(box, h, omega=box)


def g_grid(cfg: GeometryConfig, h: float) -> tuple[Grid2D, np.ndarray]:
    """Grid over the bounding box of G, with Ω marked and the outside of G exterior.

    The box is widened, if needed, so that the edges of Ω land on grid lines.
    """
    gxmin, gxmax, gymin, gymax = cfg.g_box
    oxmin, _, oymin, _ = cfg.omega_box
    # shift the box outward to an Ω-aligned lattice
    kx = math.ceil((oxmin - gxmin) / h - _SNAP_TOL)
    ky = math.ceil((oymin - gymin) / h - _SNAP_TOL)
    x0, y0 = oxmin - kx * h, oymin - ky * h
    nx = math.ceil((gxmax - x0) / h - _SNAP_TOL)
    ny = math.ceil((gymax - y0) / h - _SNAP_TOL)
    box = (x0, x0 + nx * h, y0, y0 + ny * h)
    return build_grid(box, h, omega=cfg.omega_box, disk=(cfg.G_center, cfg.R_G))


def boundary_indices(nx: int, ny: int) -> tuple[np.ndarray, np.ndarray]:
    """∂Ω node indices of an ``nx`` x ``ny`` rectangle grid, counterclockwise.

    Starts at the lower-left corner and walks bottom, right, top, left edges;
    every node appears once.
    """
    ii = np.concatenate(
        [
            np.arange(nx),
            np.full(ny - 1, nx - 1),
            np.arange(nx - 2, -1, -1),
            np.zeros(ny - 2, dtype=int),
        ]
    )
    jj = np.concatenate(
        [
            np.zeros(nx, dtype=int),
            np.arange(1, ny),
            np.full(nx - 1, ny - 1),
            np.arange(ny - 2, 0, -1),
        ]
    )
    return ii.astype(np.intp), jj.astype(np.intp)


def gamma_indices(nx: int, ny: int) -> tuple[np.ndarray, np.ndarray]:
    """Γ node indices (right edge, corners excluded), bottom to top."""
    jj = np.arange(1, ny - 1, dtype=np.intp)
    return np.full_like(jj, nx - 1), jj
