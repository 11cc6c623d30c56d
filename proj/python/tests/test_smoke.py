import json
import math

import numpy as np
import pytest

import yopinn


def test_bright_parameters_and_peak():
    p = yopinn.bright_params()
    assert abs(p.m + 0.5) < 1e-12
    assert abs(p.n - math.sqrt(3) / 2) < 1e-12
    u, v, L = yopinn.eval_rw(p, np.array([0.0, 1.0]), np.array([0.0, 0.0]))
    assert abs(math.hypot(u[0], v[0]) - 2.0) < 1e-14
    assert abs(L[0] - 6.0) < 1e-14
    assert abs(u[1] - 0.25) < 1e-14


def test_domain_errors_map_to_value_error():
    with pytest.raises(ValueError):
        yopinn.derive_rw_parameters(-1.0, 0.0, 0.0)
    assert yopinn.classify(1.0, 0.0) == "bright"


def test_presets_and_resolve():
    names = yopinn.preset_names()
    assert "forward-bright-desk" in names
    c = yopinn.preset("inverse")
    assert c["n_q"] == 2000
    r = yopinn.resolve({"preset": "inverse-desk", "seed": 4})
    assert r["seed"] == 4
    assert r["kind"] == "inverse"
    with pytest.raises(ValueError):
        yopinn.resolve({"preset": "inverse-desk", "no_such_key": 1})


def test_metrics():
    assert yopinn.relative_l2_error(np.array([3.0, 3.0]), np.array([3.0, 4.0])) == pytest.approx(0.2)
    assert yopinn.parameter_relative_error(1.01, 1.0) == pytest.approx(1.0)


def test_tiny_run_and_predict(tmp_path):
    config = {
        "preset": "forward-bright-desk",
        "domain": {"nx": 41, "nt": 21},
        "n_q": 30,
        "n_f": 60,
        "hidden_layers": 2,
        "width": 6,
        "schedule": {"adam_iters": 10, "lbfgs_iters": 5},
        "checkpoint_every": 0,
        "targets": {"max_error_S": None, "max_error_L": None},
    }
    rec = yopinn.run(config, tmp_path / "run")
    assert rec["format"] == "yopinn-run"
    assert rec["ok"]
    assert rec["iterations"] == 15
    assert math.isfinite(rec["error_S"])
    out = yopinn.predict(tmp_path / "run" / "params.json", np.zeros(4), np.linspace(-1, 1, 4))
    assert out.shape == (3, 4)
    assert np.all(np.isfinite(out))
    again = yopinn.run(config, tmp_path / "again")
    assert again["error_S"] == rec["error_S"]


def test_tiny_sweep(tmp_path):
    config = {
        "preset": "inverse-desk",
        "domain": {"nx": 41, "nt": 21},
        "n_q": 30,
        "n_f": 60,
        "hidden_layers": 2,
        "width": 6,
        "schedule": {"adam_iters": 5, "lbfgs_iters": 2},
        "checkpoint_every": 0,
    }
    cells = yopinn.sweep([0.0, 1e-2], [0.0], config, tmp_path)
    assert len(cells) == 2
    assert [c["config"]["alpha"] for c in cells] == [0.0, 1e-2]
    assert (tmp_path / "sweep.csv").exists()


def test_verify_suite():
    results = yopinn.verify()
    assert results and all(r["passed"] for r in results)
