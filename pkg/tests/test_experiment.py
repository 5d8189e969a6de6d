import json
import math

import numpy as np
import pytest

from eitcvx.experiment import (
    ConfigError,
    ExperimentConfig,
    ExperimentError,
    config_from_dict,
    load_config,
    prepare_forward,
    run_convexity_probe,
    run_experiment,
    run_forward_only,
    run_sweep,
)
from eitcvx.io import read_matrix_csv


def test_config_parsing(tmp_path):
    (tmp_path / "c.toml").write_text(
        '[grid]\nh_G = "1/40"\nh_omega = 0.05\nN = 16\n'
        '[inversion]\nlambda = 2\nalpha = 0.02\nmethod = "gradient"\n'
        '[noise]\ndelta = 0.01\nseed = 9\nper_phi = true\n'
        '[sweep]\nlambda = [0, 3]\n'
        '[phantom]\nshape = "disk"\nsigma_a = 3\n'
    )
    cfg = load_config(tmp_path / "c.toml")
    assert cfg.h_G == 1 / 40 and cfg.h_omega == 0.05 and cfg.N == 16
    assert cfg.params.lam == 2 and cfg.params.alpha == 0.02 and cfg.params.method == "gradient"
    assert cfg.delta == 0.01 and cfg.seed == 9 and cfg.noise_per_phi
    assert cfg.sweep_lam == (0.0, 3.0)
    assert cfg.phantom == "disk" and cfg.sigma_a == 3.0


@pytest.mark.parametrize(
    "doc, fragment",
    [
        ({"grid": {"h_g": 0.1}}, "unknown key"),
        ({"grids": {}}, "unknown section"),
        ({"grid": {"N": 2.5}}, "integer"),
        ({"grid": {"h_G": "1/0"}}, "cannot parse"),
        ({"grid": {"h_G": 0.03, "h_omega": 0.05}}, "not a positive integer"),
        ({"inversion": {"alpha": 2.0}}, "alpha"),
        ({"geometry": {"A": 0.5}}, "Omega not inside"),
        ({"phantom": {"shape": "nosuch"}}, "neither"),
        ({"sweep": {"lambda": []}}, "non-empty"),
        ({"noise": {"delta": True}}, "boolean"),
    ],
)
def test_config_errors(doc, fragment):
    with pytest.raises(ConfigError, match=fragment):
        config_from_dict(doc)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")
    (tmp_path / "bad.toml").write_text("[grid\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")


def test_relative_image_path(tmp_path):
    from PIL import Image
    Image.fromarray(np.zeros((8, 8), np.uint8)).save(tmp_path / "p.png")
    cfg = config_from_dict({"phantom": {"shape": "p.png"}}, base_dir=tmp_path)
    assert cfg.phantom == str((tmp_path / "p.png").resolve())


def test_forward_data(tiny_config):
    fwd = prepare_forward(tiny_config)
    assert fwd.clean.g0.shape == (40, 8) and fwd.clean.g1.shape == (9, 8)
    assert np.all(fwd.clean.g0 > 0)
    assert fwd.sigma_true.shape == (11, 11) and fwd.inclusion.any()
    assert 0 < fwd.min_u <= fwd.clean.g0.min()


def test_run_outputs_and_reproducibility(tiny_config, tmp_path):
    cfg = tiny_config.with_(delta=0.01, seed=4)
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    for name in ("sigma.csv", "g0.csv", "g1.csv", "phi.csv", "a.csv"):
        assert np.array_equal(read_matrix_csv(tmp_path / "a" / name), read_matrix_csv(tmp_path / "b" / name))
    names = {p.name for p in (tmp_path / "a").iterdir()}
    assert {"sigma.png", "sigma_true.png", "metrics.csv", "convergence.csv",
            "phi_summary.csv", "manifest.json"} <= names
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed"] == 4 and man["noise"]["delta"] == 0.01 and man["command"] == "run"
    assert man["min_u_omega"] > 0
    assert a.metrics["n_phi"] == 8
    assert a.metrics["contrast"] == b.metrics["contrast"]
    conv = (tmp_path / "a" / "convergence.csv").read_text().splitlines()
    assert conv[0].startswith("phi_index,")
    c = run_experiment(cfg.with_(seed=5))
    assert c.metrics["contrast"] != a.metrics["contrast"]


def test_threads_do_not_change_results(tiny_config):
    one = run_experiment(tiny_config, threads=1)
    two = run_experiment(tiny_config, threads=2)
    assert np.array_equal(one.reconstruction.sigma, two.reconstruction.sigma)


def test_sweep(tiny_config, tmp_path):
    rows = run_sweep(tiny_config, tmp_path, lams=(0.0, 3.0), alphas=(0.01,), epss=(0.0002,))
    assert [r["lambda"] for r in rows] == [0.0, 3.0]
    assert (tmp_path / "sweep_metrics.csv").exists()


def test_forward_only(tiny_config, tmp_path):
    fwd, data = run_forward_only(tiny_config, tmp_path)
    assert np.allclose(read_matrix_csv(tmp_path / "g0.csv"), data.g0)
    assert (tmp_path / "sigma_true.png").exists()
    assert json.loads((tmp_path / "manifest.json").read_text())["command"] == "forward-only"


def test_convexity_probe_rows(tiny_config, tmp_path):
    rows = run_convexity_probe(tiny_config, trials=10, out_dir=tmp_path)
    assert len(rows) == 10 and all(r["holds"] for r in rows)
    assert (tmp_path / "convexity_probe.csv").exists()


def test_stage_errors_are_labelled(tiny_config, tmp_path):
    junk = tmp_path / "junk.png"
    junk.write_bytes(b"not an image")
    with pytest.raises(ExperimentError, match=r"\[phantom\] PhantomError") as info:
        run_experiment(tiny_config.with_(phantom=str(junk)))
    assert info.value.stage == "phantom"
