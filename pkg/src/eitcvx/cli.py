"""Command-line entry point: ``eitcvx {run,sweep,forward-only,probe-convexity}``."""
from __future__ import annotations

import logging
import sys

import click

from .experiment import (
    ConfigError,
    ExperimentConfig,
    ExperimentError,
    load_config,
    run_convexity_probe,
    run_experiment,
    run_forward_only,
    run_sweep,
)

log = logging.getLogger("eitcvx")


def _resolve(config, seed, out, threads) -> tuple[ExperimentConfig, str]:
    cfg = load_config(config) if config else ExperimentConfig()
    kw = {}
    if seed is not None:
        kw["seed"] = seed
    if threads is not None:
        kw["threads"] = threads
    if out is not None:
        kw["out_dir"] = out
    cfg = cfg.with_(**kw) if kw else cfg
    return cfg, cfg.out_dir


def common_options(f):
    f = click.option("--threads", type=click.IntRange(min=1), default=None,
                     help="Worker threads for forward solves and per-angle minimisations.")(f)
    f = click.option("--out", "out", type=click.Path(file_okay=False), default=None,
                     help="Output directory (overrides [output] dir).")(f)
    f = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None,
                     help="Noise / probe seed (unsigned 64-bit).")(f)
    f = click.option("--config", "config", type=click.Path(exists=True, dir_okay=False),
                     default=None, help="TOML experiment configuration.")(f)
    return f


def _guard(fn):
    try:
        return fn()
    except ConfigError as exc:
        raise click.UsageError(f"invalid configuration: {exc}") from exc
    except ExperimentError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Convexification-with-viscosity EIT toolkit."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")


@main.command()
@common_options
def run(config, seed, out, threads):
    """Forward data, inversion and metrics for one configuration."""
    def go():
        cfg, out_dir = _resolve(config, seed, out, threads)
        res = run_experiment(cfg, out_dir)
        m = res.metrics
        click.echo(f"contrast {m['contrast']:.4f} (true {m['contrast_true']:g}), "
                   f"relative L2 {m['relative_l2']:.4f}, "
                   f"converged {m['converged_fraction']:.3f} of {m['n_phi']} angles -> {out_dir}")
    _guard(go)


@main.command()
@common_options
def sweep(config, seed, out, threads):
    """One inversion per combination of the [sweep] lists, on shared data."""
    def go():
        cfg, out_dir = _resolve(config, seed, out, threads)
        rows = run_sweep(cfg, out_dir)
        for r in rows:
            click.echo(f"lambda {r['lambda']:g} alpha {r['alpha']:g} eps {r['eps']:g}: "
                       f"contrast {r['contrast']:.4f} error {r['contrast_error']:.4f} "
                       f"relative L2 {r['relative_l2']:.4f}")
    _guard(go)


@main.command("forward-only")
@common_options
def forward_only(config, seed, out, threads):
    """Write boundary traces (g0, g1) and the true σ without inverting."""
    def go():
        cfg, out_dir = _resolve(config, seed, out, threads)
        _, data = run_forward_only(cfg, out_dir)
        click.echo(f"g0 {data.g0.shape}, g1 {data.g1.shape} -> {out_dir}")
    _guard(go)


@main.command("probe-convexity")
@common_options
@click.option("--trials", type=click.IntRange(min=1), default=100, show_default=True)
def probe_convexity(config, seed, out, threads, trials):
    """Check J(z2) - J(z1) - <J'(z1), z2 - z1> >= alpha |z2 - z1|^2 on random pairs."""
    def go():
        cfg, out_dir = _resolve(config, seed, out, threads)
        rows = run_convexity_probe(cfg, trials, out_dir)
        ok = sum(r["holds"] for r in rows)
        click.echo(f"convexity bound holds in {ok}/{len(rows)} trials -> {out_dir}")
        if ok < len(rows):
            sys.exit(3)
    _guard(go)


if __name__ == "__main__":  # pragma: no cover
    main()
