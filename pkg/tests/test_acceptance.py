"""Acceptance criteria, one test per criterion (criterion 1 also has its CI-sized variant).

Desk-scale runs are marked ``slow``.  Measured numbers are collected in
``acceptance_metrics.json`` next to the package root.
"""
import json
from pathlib import Path

import numpy as np
import pytest

from rbspin.affine import ParameterGrid
from rbspin.diagnostics import (basis_size_for, err_sf, error_report, projector_distance,
                                snapshot_svd, truth_sweep)
from rbspin.models import build_model
from rbspin.offline import GreedyConfig, greedy_train, residual
from rbspin.online import lift, observable_eval, reduced_ground
from rbspin.truth import dense_ground_manifold, solve_ground_manifold

from conftest import dense_ground

METRICS_PATH = Path(__file__).resolve().parents[1] / "acceptance_metrics.json"
METRICS = {}


@pytest.fixture(scope="module", autouse=True)
def _dump_metrics():
    yield
    old = json.loads(METRICS_PATH.read_text()) if METRICS_PATH.exists() else {}
    old.update(METRICS)
    METRICS_PATH.write_text(json.dumps(old, indent=2, sort_keys=True, default=float) + "\n")


def _train(kind, Nx, Ny, counts, **kw):
    op, lat, sf = build_model(kind, Nx, Ny)
    grid = ParameterGrid.uniform(op.domain, counts)
    rbm = greedy_train(op, [sf], GreedyConfig(grid, **kw))
    return op, sf, grid, rbm


@pytest.fixture(scope="module")
def triangle22_full():
    # 20^3 training grid; stop at N=62 so that the same model serves the warm-start criterion
    return _train("triangle", 2, 2, (20, 20, 20), tol=1e-7, n_f=200, max_basis=62)


@pytest.fixture(scope="module")
def rydberg_runs():
    """Greedy runs (N=100) and snapshot spectra on the 50x50 grid for Nx = 9, 11, 13."""
    out = {}
    for Nx in (9, 11, 13):
        op, sf, grid, rbm = _train("rydberg", Nx, 1, (50, 50), tol=1e-12, n_f=400, max_basis=100)
        sigma = snapshot_svd(op, grid, rbm=rbm)
        out[Nx] = (op, sf, grid, rbm, sigma)
    return out


@pytest.mark.slow
def test_criterion_1_triangle_accuracy_ci_variant():
    op, sf, grid, rbm = _train("triangle", 2, 2, (10, 10, 10), tol=1e-7, n_f=200, max_basis=50)
    assert rbm.N == 50
    test = ParameterGrid.interleaved(op.domain, (9, 9, 9))
    rep = error_report(rbm, op, test, vectors=False)
    METRICS["c1_ci"] = {"N": rbm.N, "err_val": rep.err_val, "mean_val": rep.mean_val,
                        "train_solves": rbm.meta["n_truth_solves"], "seconds": rep.seconds}
    assert rep.err_val < 1e-5


@pytest.mark.slow
def test_criterion_1_triangle_accuracy(triangle22_full):
    op, sf, grid, rbm = triangle22_full
    small = rbm.truncate(50)
    test = ParameterGrid.interleaved(op.domain, (19, 19, 19))
    rep = error_report(small, op, test, vectors=False)
    METRICS["c1"] = {"N": small.N, "err_val": rep.err_val, "mean_val": rep.mean_val,
                     "train_solves": rbm.meta["n_truth_solves"], "seconds": rep.seconds,
                     "m_mismatches": rep.summary()["m_mismatches"]}
    assert rep.err_val < 1e-6


@pytest.mark.slow
def test_criterion_2_degeneracy_stress(triangle22_full):
    op, sf, grid, rbm = triangle22_full
    mu = (1.0, 1.0, 0.01)
    truth = solve_ground_manifold(op(mu), mu=mu)
    m_rb = reduced_ground(rbm, mu, op).m
    METRICS["c2"] = {"m_truth": truth.m, "m_rb": m_rb, "gap": truth.gap}
    assert truth.m == 16
    assert m_rb == 16


@pytest.mark.slow
def test_criterion_3_residual_tracks_singular_values(rydberg_runs):
    op, sf, grid, rbm, sigma = rydberg_runs[13]
    hist = {r["N"]: r["max_residual"] for r in rbm.history}
    Ns = np.array([n for n in sorted(hist) if 20 <= n <= 100])
    r = np.log10([hist[n] for n in Ns])
    s = np.log10(sigma[Ns - 1])
    slope_r = np.polyfit(Ns, r, 1)[0]
    slope_s = np.polyfit(Ns, s, 1)[0]
    offset = r - s
    ratio = slope_r / slope_s
    METRICS["c3"] = {"slope_residual": slope_r, "slope_sigma": slope_s, "ratio": ratio,
                     "offset_mean": float(offset.mean()), "offset_std": float(offset.std()),
                     "offset_min": float(offset.min()), "n_points": int(Ns.size)}
    assert 0.5 <= ratio <= 2.0
    assert offset.min() > 0 and offset.std() <= 0.5


@pytest.mark.slow
def test_criterion_4_mild_dimension_growth(rydberg_runs):
    sizes = {Nx: basis_size_for(run[4], 1e-10) for Nx, run in rydberg_runs.items()}
    METRICS["c4"] = {"basis_size_1e-10": sizes,
                     "dims": {Nx: run[0].dim for Nx, run in rydberg_runs.items()}}
    assert rydberg_runs[13][0].dim == 16 * rydberg_runs[9][0].dim
    assert sizes[13] < 2 * sizes[9]


@pytest.mark.slow
def test_criterion_5_structure_factor_at_n8(rydberg_runs):
    op, sf, grid, rbm, sigma = rydberg_runs[13]
    mu = (4.5, 3.7)
    truth = solve_ground_manifold(op(mu), mu=mu)
    S = sf.expectation(truth.states, mu).real
    small = rbm.truncate(8)
    S_rb = observable_eval(small, reduced_ground(small, mu, op), sf).real
    err, _ = err_sf(S, S_rb)
    METRICS["c5"] = {"err_sf": err, "m_truth": truth.m}
    assert err <= 5e-2


@pytest.mark.slow
def test_criterion_6_warm_start_speedup(triangle22_full):
    op, sf, grid, rbm = triangle22_full
    assert rbm.N == 62
    test = ParameterGrid.interleaved(op.domain, (9, 9, 9))
    _, it_rb = truth_sweep(op, test, "surrogate", rbm=rbm, keep_states=False)
    _, it_nb = truth_sweep(op, test, "neighbor", keep_states=False)
    METRICS["c6"] = {"iterations_surrogate": it_rb, "iterations_neighbor": it_nb, "ratio": it_rb / it_nb}
    assert it_rb <= 0.25 * it_nb


def test_criterion_7_residual_formula_matches_full_space():
    op, sf, grid, rbm = _train("rydberg", 10, 1, (8, 8), tol=1e-9, n_f=25)
    worst = 0.0
    for rec in rbm.history:
        sub = rbm.truncate(rec["N"])
        for mu in grid.points:
            sol = reduced_ground(sub, mu, op)
            V = lift(sub, sol)
            ref = np.linalg.norm(op(mu) @ V - sol.energy * V)
            got = residual(sub, mu, sol.phi, sol.energy, op)
            # the full-space reference itself carries round-off of order eps * ||H||
            floor = 100 * np.finfo(float).eps * np.abs(sol.theta).sum() * op.n_terms
            worst = max(worst, abs(got - ref) / max(ref, floor))
            assert abs(got - ref) <= 1e-8 * ref + floor
    METRICS["c7"] = {"iterations": len(rbm.history), "worst_relative": worst}


def test_criterion_8_variational_suite(trained_rydberg8, rydberg8):
    rbm, grid = trained_rydberg8
    op, lat, sf = rydberg8
    rng = np.random.default_rng(8)
    lo, hi = op.domain[:, 0], op.domain[:, 1]
    pts = lo + (hi - lo) * rng.random((40, 2))
    sizes = list(range(1, rbm.N + 1, 4)) + [rbm.N]
    subs = [rbm.truncate(n) for n in sizes]
    for mu in pts:
        lam = dense_ground(op(mu))[0]
        energies = [reduced_ground(s, mu, op).energy for s in subs]
        assert min(energies) >= lam - 1e-12 * abs(lam)
        assert np.all(np.diff(energies) <= 1e-10 * abs(lam))
        sol = reduced_ground(rbm, mu, op)
        S = observable_eval(rbm, sol, sf)
        assert np.abs(S.imag).max() <= 1e-10 and S.real.min() >= -1e-10
        # sum over the momentum grid of S(k) equals the total occupation
        V = lift(rbm, sol)
        occ = sum(np.vdot(V, f @ V).real for f in sf.factors[0]) / sol.m
        assert abs(S.real.sum() - occ) <= 1e-12 * max(1.0, occ)
    for mu, _, _ in rbm.samples:
        lam = solve_ground_manifold(op(mu)).energy
        assert abs(reduced_ground(rbm, mu, op).energy - lam) <= 1e-10 * abs(lam)


@pytest.mark.parametrize("kind,Nx,Ny", [("rydberg", 10, 1), ("triangle", 3, 1)])
def test_criterion_9_iterative_vs_dense(kind, Nx, Ny):
    op, lat, sf = build_model(kind, Nx, Ny)
    assert op.dim <= 1024
    rng = np.random.default_rng(9)
    lo, hi = op.domain[:, 0], op.domain[:, 1]
    for mu in lo + (hi - lo) * rng.random((20, len(lo))):
        H = op(mu)
        it = solve_ground_manifold(H, mu=mu, dense_cap=0)
        de = dense_ground_manifold(H, mu=mu)
        assert it.method == "iterative"
        assert it.m == de.m
        assert abs(it.energy - de.energy) <= 1e-10
        assert projector_distance(it.states, de.states) <= 1e-8
