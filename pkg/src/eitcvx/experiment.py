"""Config-driven end-to-end runs: forward data, inversion, recovery, metrics.

A run goes through the stages ``phantom -> forward -> traces -> noise ->
transform -> minimize -> recover -> qrm -> metrics``.  Any failure is re-raised
as :class:`ExperimentError` naming the stage.
"""
from __future__ import annotations

import itertools
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .data import add_noise, log_transform
from .forward import (
    BoundaryDataset,
    ForwardSolver,
    Phantom,
    extract_traces,
    omega_offsets,
    solve_all_sources,
    trace_reducer,
)
from .functional import (
    ConvexParams,
    PairField,
    convexity_probe,
    h2_norm_sq,
)
from .geometry import (
    GeometryConfig,
    Grid2D,
    SourceSet,
    boundary_indices,
    g_grid,
    gamma_indices,
    omega_grid,
    source_positions,
    validate_geometry,
)
from .io import write_field, write_manifest, write_matrix_csv, write_table_csv
from .optimize import harmonic_extension, minimize_single_phi
from .phantoms import BUILTIN_SHAPES, rasterize_phantom
from .qrm import centroid, contrast, high_region, minimize_K, relative_l2, sigma_from_V
from .recovery import recover_a, recover_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "ExperimentError",
    "ExperimentConfig",
    "ForwardData",
    "Reconstruction",
    "ExperimentResult",
    "load_config",
    "config_from_dict",
    "prepare_forward",
    "noisy_data",
    "invert",
    "score",
    "run_experiment",
    "run_sweep",
    "run_lambda_sweep",
    "run_forward_only",
    "run_convexity_probe",
]


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def _stage(name: str):
    try:
        yield
    except ExperimentError:
        raise
    except Exception as exc:  # noqa: BLE001 - relabelled and re-raised
        raise ExperimentError(name, exc) from exc


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    phantom: str = "A"
    sigma_a: float = 2.0
    smooth: bool = True
    h_G: float = 1.0 / 80
    h_omega: float = 1.0 / 40
    N: int = 64
    params: ConvexParams = field(default_factory=ConvexParams)
    periodic_spline: bool = False
    delta: float = 0.0
    seed: int = 0
    noise_per_phi: bool = False
    qrm_ridge: float = 0.0
    qrm_rtol: float = 1e-8
    sweep_lam: tuple = ()
    sweep_alpha: tuple = ()
    sweep_eps: tuple = ()
    out_dir: str = "out"
    dump_traces: bool = True
    threads: int = 1

    def __post_init__(self):
        validate_geometry(self.geometry)
        if self.N < 4:
            raise ConfigError("N must be at least 4")
        if self.sigma_a < 1:
            raise ConfigError("sigma_a must be >= 1")
        if not (self.h_G > 0 and self.h_omega > 0):
            raise ConfigError("grid spacings must be positive")
        ratio = self.h_omega / self.h_G
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
            raise ConfigError(f"h_omega/h_G = {ratio:g} is not a positive integer")
        if not 0 <= self.delta < 1:
            raise ConfigError("noise level delta must lie in [0, 1)")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.phantom not in BUILTIN_SHAPES and not Path(self.phantom).is_file():
            raise ConfigError(f"phantom {self.phantom!r} is neither a built-in shape nor an existing file")

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


# ---------------------------------------------------------------- config file

_SECTIONS = {
    "geometry": {f.name: f.name for f in fields(GeometryConfig)},
    "phantom": {"shape": "phantom", "sigma_a": "sigma_a", "smooth": "smooth"},
    "grid": {"h_G": "h_G", "h_omega": "h_omega", "N": "N"},
    "inversion": {
        "lambda": "lam", "lam": "lam", "alpha": "alpha", "eps": "eps", "gamma": "gamma",
        "grad_tol": "grad_tol", "max_iters": "max_iters", "R": "R", "method": "method",
        "periodic_spline": "periodic_spline",
    },
    "noise": {"delta": "delta", "seed": "seed", "per_phi": "noise_per_phi"},
    "qrm": {"ridge": "qrm_ridge", "rtol": "qrm_rtol"},
    "sweep": {"lambda": "sweep_lam", "lam": "sweep_lam", "alpha": "sweep_alpha", "eps": "sweep_eps"},
    "output": {"dir": "out_dir", "dump_traces": "dump_traces", "threads": "threads"},
}
_PARAM_KEYS = {f.name for f in fields(ConvexParams)}


def _number(value, key):
    """Accept numbers and exact fraction strings such as ``"1/80"``."""
    if isinstance(value, bool):
        raise ConfigError(f"{key}: expected a number, got a boolean")
    if isinstance(value, (int, float)):
        return value
    if isinstance(value, str):
        try:
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"{key}: cannot parse {value!r} as a number") from exc
    raise ConfigError(f"{key}: expected a number, got {type(value).__name__}")


def config_from_dict(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Build a config from a parsed TOML document; unknown keys are errors."""
    geo, params, top = {}, {}, {}
    for section, body in doc.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in body.items():
            target = _SECTIONS[section].get(key)
            if target is None:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            name = f"{section}.{key}"
            if section == "geometry":
                if target == "G_center":
                    value = tuple(_number(v, name) for v in value)
                else:
                    value = _number(value, name)
                geo[target] = value
            elif target in _PARAM_KEYS:
                params[target] = value if target == "method" else _number(value, name)
            elif section == "sweep":
                if not isinstance(value, list) or not value:
                    raise ConfigError(f"{name} must be a non-empty list")
                top[target] = tuple(float(_number(v, name)) for v in value)
            elif target in ("h_G", "h_omega", "sigma_a", "delta", "qrm_ridge", "qrm_rtol"):
                top[target] = float(_number(value, name))
            elif target in ("N", "seed", "threads"):
                if not isinstance(value, int) or isinstance(value, bool):
                    raise ConfigError(f"{name} must be an integer")
                top[target] = value
            elif target == "phantom":
                if not isinstance(value, str):
                    raise ConfigError(f"{name} must be a string")
                if value not in BUILTIN_SHAPES and base_dir is not None and not Path(value).is_absolute():
                    value = str((base_dir / value).resolve())
                top[target] = value
            else:
                top[target] = value
    if "max_iters" in params:
        params["max_iters"] = int(params["max_iters"])
    try:
        return ExperimentConfig(
            geometry=GeometryConfig(**geo), params=ConvexParams(**params), **top
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc, base_dir=path.parent)


# -------------------------------------------------------------- pipeline

@dataclass
class ForwardData:
    phantom: Phantom
    ggrid: Grid2D
    omega: Grid2D
    sources: SourceSet
    clean: BoundaryDataset
    sigma_true: np.ndarray      # on the Ω grid
    inclusion: np.ndarray       # on the Ω grid
    min_u: float = math.nan     # min of u over the closed Ω and all sources


def prepare_forward(cfg: ExperimentConfig, threads: int | None = None) -> ForwardData:
    threads = threads or cfg.threads
    geo = cfg.geometry
    with _stage("phantom"):
        ggrid, mask = g_grid(geo, cfg.h_G)
        phantom = rasterize_phantom(cfg.phantom, cfg.sigma_a, geo, ggrid, smooth=cfg.smooth)
        omega, _ = omega_grid(geo, cfg.h_omega)
        offsets = omega_offsets(geo, ggrid, cfg.h_omega)
        i0, j0, step, nx, ny = offsets
        sub = (slice(i0, i0 + step * (nx - 1) + 1, step), slice(j0, j0 + step * (ny - 1) + 1, step))
        sigma_true = phantom.sigma[sub].copy()
        inclusion = phantom.inclusion[sub].copy()
    with _stage("forward"):
        sources = source_positions(geo, cfg.N)
        solver = ForwardSolver(phantom.sigma, ggrid, mask)
        traces = trace_reducer(offsets)
        reduced = solve_all_sources(solver, sources, geo.rho, threads=threads,
                                    reduce=lambda u: (*traces(u), float(u[sub].min())))
    with _stage("positivity"):
        min_u = min(m for _, _, m in reduced)
        if not min_u > 0:
            raise ValueError(f"potential not positive on Omega (min {min_u:.3e})")
    with _stage("traces"):
        clean = extract_traces([(c0, c1) for c0, c1, _ in reduced], offsets, ggrid, sources)
    return ForwardData(phantom, ggrid, omega, sources, clean, sigma_true, inclusion, min_u)


def noisy_data(cfg: ExperimentConfig, clean: BoundaryDataset) -> BoundaryDataset:
    with _stage("noise"):
        if cfg.delta == 0:
            return replace(clean, seed=cfg.seed)
        return add_noise(clean, cfg.delta, cfg.seed, per_phi=cfg.noise_per_phi)


@dataclass
class PhiResult:
    index: int
    phi: float
    iterations: int
    inner_iterations: int
    converged: bool
    final_J: float
    final_grad_norm: float
    trace: list


@dataclass
class Reconstruction:
    a: np.ndarray
    V: np.ndarray
    sigma: np.ndarray
    per_phi: list
    params: ConvexParams

    @property
    def converged_fraction(self) -> float:
        return sum(p.converged for p in self.per_phi) / len(self.per_phi)


def invert(data: BoundaryDataset, omega: Grid2D, params: ConvexParams, *,
           periodic_spline: bool = False, qrm_ridge: float = 0.0, qrm_rtol: float = 1e-8,
           threads: int = 1, keep_w: bool = False) -> Reconstruction:
    """Per-φ minimisation, recovery of a, then the quasi-reversibility step."""
    with _stage("transform"):
        tb = log_transform(data, params.eps, periodic=periodic_spline)

    def one(k):
        pair = PairField.from_boundary(omega, *tb.at(k), phi=float(tb.phi[k]))
        res = minimize_single_phi(harmonic_extension(pair), params)
        w, _ = recover_w(res.pair, params.eps)
        info = PhiResult(k, float(tb.phi[k]), res.iterations, res.inner_iterations,
                         res.converged, float(res.final_J), float(res.final_grad_norm),
                         [(int(i), float(J), float(g)) for i, J, g in res.trace])
        return np.asarray(w, dtype=float), info

    with _stage("minimize"):
        ks = range(len(tb.phi))
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                out = list(pool.map(one, ks))
        else:
            out = [one(k) for k in ks]
    with _stage("recover"):
        a = recover_a([w for w, _ in out], omega.h, data.h_phi)
    with _stage("qrm"):
        V = minimize_K(a, omega, ridge=qrm_ridge, rtol=qrm_rtol)
        sigma = sigma_from_V(V)
    return Reconstruction(a, V, sigma, [info for _, info in out], params)


def score(rec: Reconstruction, fwd: ForwardData, sigma_a: float) -> dict:
    """Metrics of a reconstruction against the phantom restricted to Ω."""
    sigma = rec.sigma
    inc = fwd.inclusion
    c = contrast(sigma, inc if inc.any() else None)
    target = sigma_a if inc.any() else 1.0
    hr = high_region(sigma)
    cx, cy = centroid(hr, fwd.omega)
    tx, ty = centroid(inc, fwd.omega)
    dist = math.hypot(cx - tx, cy - ty) if inc.any() and hr.any() else math.nan
    return {
        "contrast": c,
        "contrast_true": target,
        "contrast_error": abs(c - target) / target,
        "relative_l2": relative_l2(sigma, fwd.sigma_true),
        "max_abs_dev": float(np.max(np.abs(sigma - fwd.sigma_true))),
        "sigma_min": float(sigma.min()),
        "sigma_max": float(sigma.max()),
        "centroid_x": cx,
        "centroid_y": cy,
        "true_centroid_x": tx,
        "true_centroid_y": ty,
        "centroid_distance": dist,
        "converged_fraction": rec.converged_fraction,
        "n_phi": len(rec.per_phi),
    }


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    forward: ForwardData
    data: BoundaryDataset
    reconstruction: Reconstruction
    metrics: dict
    outputs: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


def _manifest(cfg: ExperimentConfig, command: str, outputs, timings, extra=None) -> dict:
    geo = asdict(cfg.geometry)
    geo["G_center"] = list(geo["G_center"])
    man = {
        "package_version": __version__,
        "command": command,
        "seed": int(cfg.seed),
        "kernel_backend": kernels.BACKEND,
        "geometry": geo,
        "phantom": {"shape": cfg.phantom, "sigma_a": cfg.sigma_a, "smooth": cfg.smooth},
        "grid": {"h_G": cfg.h_G, "h_omega": cfg.h_omega, "N": cfg.N,
                 "h_phi": 2 * math.pi / (cfg.N + 1)},
        "inversion": {**{k: v for k, v in asdict(cfg.params).items()},
                      "periodic_spline": cfg.periodic_spline},
        "noise": {"delta": cfg.delta, "seed": int(cfg.seed), "per_phi": cfg.noise_per_phi},
        "qrm": {"ridge": cfg.qrm_ridge, "rtol": cfg.qrm_rtol},
        "sweep": {"lambda": list(cfg.sweep_lam), "alpha": list(cfg.sweep_alpha),
                  "eps": list(cfg.sweep_eps)},
        "threads": cfg.threads,
        "timings_s": timings,
        "outputs": sorted(str(p) for p in outputs),
    }
    if math.isinf(man["inversion"]["R"]):
        man["inversion"]["R"] = "inf"
    if extra:
        man.update(extra)
    return man


def _phi_tables(rec: Reconstruction):
    summary, traces = [], []
    for p in rec.per_phi:
        summary.append({
            "phi_index": p.index, "phi": p.phi, "iterations": p.iterations,
            "inner_iterations": p.inner_iterations, "converged": int(p.converged),
            "final_J": p.final_J, "final_grad_norm": p.final_grad_norm,
            "flagged": int(not p.converged),
        })
        for it, J, g in p.trace:
            traces.append({"phi_index": p.index, "phi": p.phi, "iteration": it, "J": J, "grad_norm": g})
    return summary, traces


def _write_traces(out: Path, data: BoundaryDataset) -> list[Path]:
    return [
        write_matrix_csv(out / "g0.csv", data.g0),
        write_matrix_csv(out / "g1.csv", data.g1),
        write_matrix_csv(out / "phi.csv", data.phi[None, :]),
    ]


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int | None = None,
                   forward: ForwardData | None = None, command: str = "run") -> ExperimentResult:
    """Full pipeline; writes outputs when ``out_dir`` is given."""
    threads = threads or cfg.threads
    t0 = time.perf_counter()
    fwd = forward or prepare_forward(cfg, threads)
    t1 = time.perf_counter()
    data = noisy_data(cfg, fwd.clean)
    rec = invert(data, fwd.omega, cfg.params, periodic_spline=cfg.periodic_spline,
                 qrm_ridge=cfg.qrm_ridge, qrm_rtol=cfg.qrm_rtol, threads=threads)
    t2 = time.perf_counter()
    with _stage("metrics"):
        metrics = score(rec, fwd, cfg.sigma_a)
    timings = {"forward": t1 - t0, "inversion": t2 - t1}
    result = ExperimentResult(cfg, fwd, data, rec, metrics, timings=timings)
    if out_dir is not None:
        with _stage("output"):
            result.outputs = _write_run(Path(out_dir), result, command)
    return result


def _write_run(out: Path, res: ExperimentResult, command: str) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    rec = res.reconstruction
    paths = []
    paths += write_field(out, "sigma", rec.sigma)
    paths += write_field(out, "sigma_true", res.forward.sigma_true)
    paths += write_field(out, "a", rec.a, image=False)
    paths.append(write_table_csv(out / "metrics.csv", [res.metrics]))
    summary, traces = _phi_tables(rec)
    paths.append(write_table_csv(out / "phi_summary.csv", summary))
    paths.append(write_table_csv(out / "convergence.csv", traces,
                                 ["phi_index", "phi", "iteration", "J", "grad_norm"]))
    if res.config.dump_traces:
        paths += _write_traces(out, res.data)
    man = out / "manifest.json"
    write_manifest(man, _manifest(res.config, command, paths + [man], res.timings,
                                  {"min_u_omega": res.forward.min_u}))
    return paths + [man]


def run_sweep(cfg: ExperimentConfig, out_dir=None, threads: int | None = None,
              lams=None, alphas=None, epss=None) -> list[dict]:
    """One inversion per (λ, α, ε) combination on shared noisy data.

    Lists default to the config's sweep lists, falling back to the single
    configured value.  Rows come out in nested λ, α, ε order.
    """
    threads = threads or cfg.threads
    lams = tuple(lams if lams is not None else (cfg.sweep_lam or (cfg.params.lam,)))
    alphas = tuple(alphas if alphas is not None else (cfg.sweep_alpha or (cfg.params.alpha,)))
    epss = tuple(epss if epss is not None else (cfg.sweep_eps or (cfg.params.eps,)))
    for name, vals in (("lambda", lams), ("alpha", alphas), ("eps", epss)):
        if not vals:
            raise ConfigError(f"sweep list for {name} is empty")
    fwd = prepare_forward(cfg, threads)
    rows, outputs = [], []
    out = Path(out_dir) if out_dir is not None else None
    for lam, alpha, eps in itertools.product(lams, alphas, epss):
        sub = cfg.with_(params=cfg.params.with_(lam=float(lam), alpha=float(alpha), eps=float(eps)))
        res = run_experiment(sub, None, threads, forward=fwd)
        rows.append({"lambda": float(lam), "alpha": float(alpha), "eps": float(eps), **res.metrics})
        if out is not None:
            tag = f"lam{lam:g}_alpha{alpha:g}_eps{eps:g}"
            out.mkdir(parents=True, exist_ok=True)
            outputs += write_field(out, f"sigma_{tag}", res.reconstruction.sigma)
    if out is not None:
        with _stage("output"):
            outputs.append(write_table_csv(out / "sweep_metrics.csv", rows))
            man = out / "manifest.json"
            write_manifest(man, _manifest(cfg, "sweep", outputs + [man], {},
                                          {"sweep_rows": len(rows)}))
    return rows


def run_lambda_sweep(cfg: ExperimentConfig, lams=None, out_dir=None, threads: int | None = None) -> list[dict]:
    return run_sweep(cfg, out_dir, threads, lams=lams if lams is not None else (cfg.sweep_lam or None),
                     alphas=(cfg.params.alpha,), epss=(cfg.params.eps,))


def run_forward_only(cfg: ExperimentConfig, out_dir=None, threads: int | None = None):
    """Forward data (with the configured noise) and the true σ on Ω."""
    fwd = prepare_forward(cfg, threads)
    data = noisy_data(cfg, fwd.clean)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with _stage("output"):
            paths = _write_traces(out, data)
            paths += write_field(out, "sigma_true", fwd.sigma_true)
            man = out / "manifest.json"
            write_manifest(man, _manifest(cfg, "forward-only", paths + [man], {},
                                          {"min_u_omega": fwd.min_u}))
    return fwd, data


def _random_smooth(grid: Grid2D, rng, amp: float, modes: int = 3) -> np.ndarray:
    X, Y = grid.mesh()
    x0, y0 = grid.origin
    L = (grid.nx - 1) * grid.h
    u = np.zeros(grid.shape)
    for k in range(1, modes + 1):
        for m in range(1, modes + 1):
            c = rng.normal() / (k * m) ** 1.5
            u += c * np.cos(k * np.pi * (X - x0) / L + rng.uniform(0, 2 * np.pi)) \
                   * np.cos(m * np.pi * (Y - y0) / L + rng.uniform(0, 2 * np.pi))
    return amp * u


def random_pair(grid: Grid2D, rng, eps: float, amp: float = 1.0) -> PairField:
    """Smooth random pair whose own traces define the boundary data."""
    r = _random_smooth(grid, rng, amp)
    s = r - eps * _random_smooth(grid, rng, amp)
    nx, ny = grid.shape
    bi, bj = boundary_indices(nx, ny)
    gi, gj = gamma_indices(nx, ny)
    rn = (r[gi, gj] - r[gi - 1, gj]) / grid.h
    sn = (s[gi, gj] - s[gi - 1, gj]) / grid.h
    return PairField.from_boundary(grid, r[bi, bj], rn, s[bi, bj], sn, r=r, s=s)


def run_convexity_probe(cfg: ExperimentConfig, trials: int = 100, out_dir=None) -> list[dict]:
    """Strong-convexity gap against ``α‖Δ‖²`` for random pairs sharing boundary data."""
    rng = np.random.default_rng(cfg.seed)
    omega, _ = omega_grid(cfg.geometry, cfg.h_omega)
    params = cfg.params
    rows = []
    for t in range(trials):
        p1 = random_pair(omega, rng, params.eps, amp=rng.uniform(0.1, 3.0))
        p2 = p1.copy()
        free = p1.free
        p2.r[free] += _random_smooth(omega, rng, rng.uniform(0.01, 3.0))[free]
        p2.s[free] += _random_smooth(omega, rng, rng.uniform(0.01, 3.0))[free]
        gap = convexity_probe(p1, p2, params)
        bound = params.alpha * (h2_norm_sq(p2.r - p1.r, omega.h) + h2_norm_sq(p2.s - p1.s, omega.h))
        rows.append({"trial": t, "gap": gap, "bound": bound, "holds": int(gap >= bound)})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [write_table_csv(out / "convexity_probe.csv", rows)]
        man = out / "manifest.json"
        write_manifest(man, _manifest(cfg, "probe-convexity", paths + [man], {},
                                      {"trials": trials}))
    return rows
