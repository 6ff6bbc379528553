import json
import struct

import numpy as np
import pytest
import yaml

import rbspin.offline as offline
from rbspin.cli import main
from rbspin.config import DEFAULTS, build_grid, load_config, select_momenta
from rbspin.errors import ConfigError, SolverError
from rbspin.io import MAGIC, FormatError, fmt, load_model, read_header, save_model
from rbspin.models import LatticeSpec, model_coefficients
from rbspin.online import reduced_ground, scan

SMALL = {
    "model": {"kind": "rydberg", "Nx": 5},
    "train": {"grid": {"counts": [6, 6]}, "tol": 1e-6, "n_f": 36},
    "test": {"grid": {"counts": [3, 3], "layout": "interleaved"}},
    "scan": {"grid": {"axes": [4.5, {"linspace": [0.5, 4.0, 5]}]}},
    "svd": {"grid": {"counts": [3, 3]}},
    "threads": 1,
}


def write_cfg(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = write_cfg(d / "cfg.yaml", SMALL)
    assert main(["offline", "--config", str(cfg), "--out", str(d)]) == 0
    return d, cfg


def test_save_load_round_trip(trained_rydberg8, rydberg8, tmp_path):
    rbm, grid = trained_rydberg8
    op, lat, sf = rydberg8
    spec = {"kind": "rydberg", "Nx": 8, "Ny": 1, "domain": op.domain.tolist()}
    path = save_model(rbm, tmp_path / "m.rbm", spec)
    back, header = load_model(path)
    assert header["model"] == spec and back.N == rbm.N
    for name in ("gram", "h", "hh", "res_factor", "basis"):
        np.testing.assert_array_equal(getattr(back, name), getattr(rbm, name))
    cmap, coeffs = model_coefficients("rydberg", 8)
    pts = grid.points[:10]
    a = scan(rbm, op, pts, [sf])
    b = scan(back, cmap, pts, [coeffs], with_occupation=False)
    np.testing.assert_array_equal(a.energy, b.energy)
    np.testing.assert_array_equal(a.outputs["structure_factor"], b.outputs["structure_factor"])
    slim = save_model(rbm, tmp_path / "s.rbm", spec, store_basis=False)
    assert slim.stat().st_size < path.stat().st_size
    assert not read_header(slim)["has_basis"]
    assert reduced_ground(load_model(slim)[0], pts[0], cmap).energy == a.energy[0]


def test_model_file_errors(trained_rydberg8, tmp_path):
    rbm, _ = trained_rydberg8
    path = save_model(rbm, tmp_path / "m.rbm", {"kind": "rydberg", "Nx": 8, "Ny": 1})
    raw = bytearray(path.read_bytes())
    bad = tmp_path / "v.rbm"
    bad.write_bytes(raw[:8] + struct.pack("<I", 99) + raw[12:])
    with pytest.raises(FormatError):
        load_model(bad)
    assert main(["model-info", str(bad)]) == 2
    junk = tmp_path / "j.rbm"
    junk.write_bytes(b"not a model")
    with pytest.raises(FormatError):
        read_header(junk)
    trunc = tmp_path / "t.rbm"
    trunc.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(FormatError):
        load_model(trunc)
    assert raw[:8] == MAGIC


def test_fmt_round_trips():
    for x in (0.1, 1 / 3, -2.5e-300, 1e300, np.pi):
        assert float(fmt(x)) == x
    assert fmt(float("nan")) == "nan"


def test_config_defaults_and_errors(tmp_path):
    cfg = load_config()
    assert cfg.kind == "rydberg" and cfg.grid("train").shape == (50, 50)
    assert cfg.grid("test").shape == (49, 49)
    tri = load_config(overrides={"model": {"kind": "triangle", "Nx": 2, "Ny": 2}})
    assert tri.grid("train").shape == (20, 20, 20)
    with pytest.raises(ConfigError):
        load_config(overrides={"train": {"tolerance": 1e-6}})
    with pytest.raises(ConfigError):
        load_config(overrides={"bogus": 1})
    with pytest.raises(ConfigError):
        load_config(overrides={"train": {"tol": -1.0}})
    with pytest.raises(ConfigError):
        load_config(overrides={"train": {"mu_1": [0.123, 0.5]}})
    with pytest.raises(ConfigError):
        load_config(overrides={"train": {"grid": {"counts": [3, 3, 3]}}})
    p = tmp_path / "c.yaml"
    p.write_text("train:\n  tol: 1e-7\n")
    assert load_config(p)["train"]["tol"] == 1e-7
    p.write_text("train: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_grid_specs():
    box = np.array([[0.0, 5.0], [0.5, 4.0]])
    g = build_grid({"axes": [[1.0, 2.0], {"linspace": [0.5, 4.0, 3]}]}, box)
    assert g.shape == (2, 3)
    g = build_grid({"axes": [4.5, [1.0]]}, box)
    assert g.shape == (1, 1)
    with pytest.raises(ConfigError):
        build_grid({"axes": [[9.0], [1.0]]}, box)
    with pytest.raises(ConfigError):
        build_grid({"counts": [2, 2], "layout": "random"}, box)
    with pytest.raises(ConfigError):
        build_grid({"counts": [2, 2], "spacing": 1}, box)


def test_select_momenta():
    lat = LatticeSpec("triangle-lattice", 2, 2, 3, "periodic")
    idx = select_momenta([[0, 1], [1, 0]], lat)
    assert len(idx) == 2
    with pytest.raises(ConfigError):
        select_momenta([[0.5, 0]], lat)


def test_cli_offline_outputs(trained_dir):
    d, _ = trained_dir
    for name in ("model.rbm", "training_log.jsonl", "training_summary.json", "training_history.csv"):
        assert (d / name).exists()
    summary = json.loads((d / "training_summary.json").read_text())
    assert summary["stop_reason"] == "tolerance" and summary["final_max_residual"] <= 1e-6
    log = [json.loads(l) for l in (d / "training_log.jsonl").read_text().splitlines()]
    assert len(log) == summary["n_truth_solves"]


def test_cli_scan_deterministic(trained_dir, tmp_path, capsys):
    d, cfg = trained_dir
    for sub in ("a", "b"):
        assert main(["scan", "--config", str(cfg), "--model", str(d / "model.rbm"),
                     "--out", str(tmp_path / sub)]) == 0
    a = (tmp_path / "a" / "scan.csv").read_text()
    assert a == (tmp_path / "b" / "scan.csv").read_text()
    lines = a.splitlines()
    assert len(lines) == 6 and lines[0].startswith("mu[")
    meta = json.loads((tmp_path / "a" / "scan.json").read_text())
    assert meta["max_residual"] <= 1e-6 * 10


def test_cli_validate_and_svd(trained_dir, tmp_path):
    d, cfg = trained_dir
    assert main(["validate", "--config", str(cfg), "--model", str(d / "model.rbm"), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "validate.json").read_text())
    assert rep["n_points"] == 9 and rep["err_val"] < 1e-5
    assert main(["svd", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    sv = json.loads((tmp_path / "svd.json").read_text())
    assert sv["n_columns"] >= 9


def test_cli_model_info(trained_dir, capsys):
    d, _ = trained_dir
    assert main(["model-info", str(d / "model.rbm")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["observables"] == ["structure_factor"] and info["has_basis"]


def test_cli_print_config(capsys):
    assert main(["--print-config"]) == 0
    assert yaml.safe_load(capsys.readouterr().out) == yaml.safe_load(yaml.safe_dump(DEFAULTS))


def test_cli_exit_codes(tmp_path):
    bad = write_cfg(tmp_path / "bad.yaml", {"train": {"tolerance": 1}})
    assert main(["offline", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["scan", "--model", str(tmp_path / "missing.rbm"), "--out", str(tmp_path)]) == 2
    assert main([]) == 2
    big = write_cfg(tmp_path / "big.yaml", {"model": {"kind": "rydberg", "Nx": 17}})
    assert main(["svd", "--config", str(big), "--out", str(tmp_path)]) == 2


def test_cli_abort_writes_partial(tmp_path, monkeypatch):
    real = offline.solve_ground_manifold
    calls = {"n": 0}

    def flaky(H, guess=None, **kw):
        calls["n"] += 1
        if calls["n"] == 2:
            raise SolverError("forced failure", kw.get("mu"))
        return real(H, guess, **kw)

    monkeypatch.setattr(offline, "solve_ground_manifold", flaky)
    cfg = write_cfg(tmp_path / "c.yaml", SMALL)
    assert main(["offline", "--config", str(cfg), "--out", str(tmp_path)]) == 3
    assert (tmp_path / "model.rbm.partial").exists()
    assert (tmp_path / "training_log.jsonl.partial").exists()
    assert not (tmp_path / "model.rbm").exists()
