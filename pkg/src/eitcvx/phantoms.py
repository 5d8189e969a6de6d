"""Conductivity phantoms rasterised onto the G grid.

Inclusions are drawn in coordinates local to Ω, ``(u, v) ∈ [0, 1]²`` with
``u`` along x and ``v`` along y, so the same shape fits any rectangle.
Bitmaps follow the "dark is conductive" convention: in binary images the
inclusion is every pixel below 128, in level images conductivity grows with
darkness.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import shapely
from PIL import Image
from scipy import ndimage
from shapely.geometry import LineString, Point, Polygon
from shapely.ops import unary_union

from .forward import Phantom
from .geometry import GeometryConfig, Grid2D

__all__ = [
    "BUILTIN_SHAPES",
    "PhantomError",
    "shape_geometry",
    "surrogate_levels",
    "remap_levels",
    "smooth_sigma",
    "rasterize_phantom",
]

SMOOTH_STD_CELLS = 2.0
SMOOTH_TRUNCATE = 4.0
BINARY_THRESHOLD = 128


class PhantomError(ValueError):
    pass


def _letter_a():
    legs = LineString([(0.2, 0.15), (0.5, 0.85), (0.8, 0.15)]).buffer(
        0.06, cap_style="flat", join_style="mitre"
    )
    bar = LineString([(0.32, 0.42), (0.68, 0.42)]).buffer(0.05, cap_style="flat")
    return unary_union([legs, bar]).intersection(Polygon([(0, 0.15), (1, 0.15), (1, 1), (0, 1)]))


def _letter_omega():
    c = (0.5, 0.55)
    ring = Point(c).buffer(0.28, quad_segs=32).difference(Point(c).buffer(0.16, quad_segs=32))
    # open the ring at the bottom
    gap = Polygon([c, (0.5 - 0.25, 0.0), (0.5 + 0.25, 0.0)])
    arc = ring.difference(gap)
    feet = unary_union(
        [
            LineString([(0.18, 0.2), (0.38, 0.2)]).buffer(0.05, cap_style="flat"),
            LineString([(0.62, 0.2), (0.82, 0.2)]).buffer(0.05, cap_style="flat"),
            LineString([(0.33, 0.2), (0.36, 0.36)]).buffer(0.05, cap_style="flat"),
            LineString([(0.67, 0.2), (0.64, 0.36)]).buffer(0.05, cap_style="flat"),
        ]
    )
    return unary_union([arc, feet])


def _disk():
    return Point(0.5, 0.5).buffer(0.2, quad_segs=64)


BUILTIN_SHAPES = {
    "A": _letter_a,
    "Omega": _letter_omega,
    "disk": _disk,
    "none": None,
    "abdomen1": "levels",
    "abdomen2": "levels",
}


def shape_geometry(name: str):
    """Shapely geometry of a built-in binary shape in Ω-local coordinates."""
    maker = BUILTIN_SHAPES.get(name)
    if maker is None or maker == "levels":
        raise PhantomError(f"{name!r} is not a binary built-in shape")
    return maker()


def surrogate_levels(name: str, U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Piecewise-constant level map in [0, 1] for the abdominal-style surrogates.

    A body ellipse at level 0.25 holds organ-like ellipses at higher levels;
    everything outside the body is 0.
    """
    def ell(cu, cv, ru, rv, angle=0.0):
        ca, sa = np.cos(angle), np.sin(angle)
        du, dv = U - cu, V - cv
        x = (ca * du + sa * dv) / ru
        y = (-sa * du + ca * dv) / rv
        return x * x + y * y < 1.0

    out = np.zeros_like(U, dtype=float)
    if name == "abdomen1":
        out[ell(0.5, 0.5, 0.36, 0.27)] = 0.25
        out[ell(0.34, 0.55, 0.12, 0.09, 0.3)] = 1.0
        out[ell(0.66, 0.47, 0.09, 0.12)] = 1.0
        out[ell(0.5, 0.36, 0.06, 0.05)] = 0.6
    elif name == "abdomen2":
        out[ell(0.5, 0.5, 0.38, 0.3)] = 0.2
        out[ell(0.32, 0.58, 0.13, 0.1, 0.4)] = 0.8
        out[ell(0.68, 0.58, 0.08, 0.11)] = 1.0
        out[ell(0.5, 0.34, 0.1, 0.06)] = 0.5
        out[ell(0.5, 0.62, 0.05, 0.05)] = 0.65
        out[ell(0.7, 0.33, 0.05, 0.04)] = 0.4
    else:
        raise PhantomError(f"unknown surrogate {name!r}")
    return out


def remap_levels(values, lo: float, hi: float, sigma_a: float) -> np.ndarray:
    """Linear map of ``[lo, hi]`` onto ``[1, sigma_a]``."""
    values = np.asarray(values, dtype=float)
    if hi <= lo:
        return np.ones_like(values)
    return 1.0 + (sigma_a - 1.0) * (values - lo) / (hi - lo)


def smooth_sigma(sigma: np.ndarray, std_cells: float = SMOOTH_STD_CELLS) -> np.ndarray:
    """Gaussian blur of the excess ``σ - 1``, then clamp to ``σ >= 1``."""
    excess = ndimage.gaussian_filter(sigma - 1.0, sigma=std_cells,
                                     truncate=SMOOTH_TRUNCATE, mode="constant")
    return np.maximum(1.0 + excess, 1.0)


def _local_coords(cfg: GeometryConfig, grid: Grid2D):
    X, Y = grid.mesh()
    xmin, xmax, ymin, ymax = cfg.omega_box
    U = (X - xmin) / (xmax - xmin)
    V = (Y - ymin) / (ymax - ymin)
    inside = (U > 0) & (U < 1) & (V > 0) & (V < 1)
    return U, V, inside


def _sample_image(img: np.ndarray, U, V, inside):
    """Nearest-pixel lookup; image row 0 is the top edge of Ω."""
    rows, cols = img.shape
    c = np.clip((U * cols).astype(int), 0, cols - 1)
    r = np.clip(((1.0 - V) * rows).astype(int), 0, rows - 1)
    out = np.full(U.shape, 255.0)
    out[inside] = img[r[inside], c[inside]]
    return out


def rasterize_phantom(source, sigma_a: float, cfg: GeometryConfig, grid: Grid2D,
                      smooth: bool = True, std_cells: float = SMOOTH_STD_CELLS) -> Phantom:
    """Build a :class:`Phantom` from a built-in shape id or an image path.

    Binary shapes and two-level images give σ ∈ {1, σ_a} before smoothing;
    multi-level images and the abdominal surrogates are mapped linearly from
    their level range onto ``[1, σ_a]``.
    """
    if sigma_a < 1:
        raise PhantomError(f"sigma_a must be >= 1, got {sigma_a}")
    U, V, inside = _local_coords(cfg, grid)
    name = str(source)
    if name in BUILTIN_SHAPES:
        kind = BUILTIN_SHAPES[name]
        if kind is None:
            levels = np.zeros(grid.shape)
        elif kind == "levels":
            levels = np.where(inside, surrogate_levels(name, U, V), 0.0)
        else:
            geom = kind()
            levels = (inside & shapely.contains_xy(geom, U, V)).astype(float)
        sigma = remap_levels(levels, 0.0, 1.0, sigma_a) if levels.max() > 0 else np.ones(grid.shape)
    else:
        path = Path(source)
        try:
            img = np.asarray(Image.open(path).convert("L"), dtype=float)
        except (OSError, ValueError) as exc:
            raise PhantomError(f"cannot read phantom image {path}: {exc}") from exc
        pix = _sample_image(img, U, V, inside)
        uniq = np.unique(img)
        if len(uniq) <= 2:
            levels = (inside & (pix < BINARY_THRESHOLD)).astype(float)
            sigma = 1.0 + (sigma_a - 1.0) * levels
        else:
            dark = 255.0 - pix
            lo, hi = 255.0 - uniq.max(), 255.0 - uniq.min()
            sigma = np.where(inside, remap_levels(dark, lo, hi, sigma_a), 1.0)
            levels = sigma - 1.0
        name = path.stem
    inclusion = levels > 0
    builtin_shape = name in BUILTIN_SHAPES and BUILTIN_SHAPES[name] is not None
    # a blank image is a valid homogeneous medium; a built-in shape must hit the grid
    if builtin_shape and not inclusion.any():
        raise PhantomError(f"phantom {name!r} has an empty inclusion on this grid")
    if smooth:
        sigma = smooth_sigma(sigma, std_cells)
    return Phantom(sigma=sigma, grid=grid, inclusion=inclusion, sigma_a=float(sigma_a), name=name)
