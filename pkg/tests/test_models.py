import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbspin.errors import ConfigError, StructuralError
from rbspin.models import (
    IDENTITY,
    NUMBER,
    SIGMA_X,
    SIGMA_Z,
    build_model,
    build_rydberg,
    build_triangle,
    heisenberg_bond,
    lift_site_operator,
    momentum_grid,
    occupation_profile,
    total_sz,
)
from rbspin.truth import solve_ground_manifold

from conftest import SX, dense_ground, kron_site, random_state


def test_lift_identity():
    np.testing.assert_array_equal(lift_site_operator(IDENTITY, 2, 3).toarray(), np.eye(8))


def test_lift_sigma_x_site_one():
    A = lift_site_operator(SIGMA_X, 1, 2).toarray()
    np.testing.assert_array_equal(A, kron_site(SX, 1, 2))
    rows, cols = np.nonzero(A)
    assert np.all((rows ^ cols) == 1)


def test_lift_number_is_bit_mask():
    D = lift_site_operator(NUMBER, 2, 3).toarray()
    idx = np.arange(8)
    np.testing.assert_array_equal(np.diag(D), (idx >> 1) & 1)
    assert np.count_nonzero(D) == 4


def test_lift_rejects_bad_input():
    with pytest.raises(StructuralError):
        lift_site_operator(np.array([[0, 1], [0, 0]]), 1, 2)
    with pytest.raises(StructuralError):
        lift_site_operator(SIGMA_Z, 4, 3)


@pytest.mark.parametrize("r,rp", [(1, 2), (1, 3), (2, 3)])
def test_lifted_operators_on_distinct_sites_commute(r, rp):
    A = lift_site_operator(SIGMA_X, r, 6)
    B = lift_site_operator(SIGMA_Z, rp, 6)
    C = A @ B - B @ A
    assert C.nnz == 0 or np.abs(C.data).max() == 0


def test_heisenberg_bond_spectrum():
    w = np.linalg.eigvalsh(heisenberg_bond(0, 1, 2).toarray())
    np.testing.assert_allclose(w, [-0.75, 0.25, 0.25, 0.25], atol=1e-15)


def test_rydberg_interaction_terms():
    op, lat = build_rydberg(2)
    np.testing.assert_array_equal(op.terms[2].toarray(), np.diag([0, 0, 0, 1.0]))
    op3, _ = build_rydberg(3)
    d = op3.terms[2].diagonal()
    # states 0b011 / 0b110 hold one nearest pair, 0b101 the distance-2 pair
    assert d[0b011] == 1 and d[0b110] == 1 and d[0b101] == 2.0 ** -6
    assert d[0b111] == 2 + 2.0 ** -6
    assert lat.dim == 4 and lat.boundary == "open"
    with pytest.raises(ConfigError):
        build_rydberg(1)


def test_rydberg_two_site_ground_energy():
    op, _ = build_rydberg(2)
    H = op((0.0, 1.0))
    lam, _, _ = dense_ground(H)
    g = solve_ground_manifold(H)
    assert abs(g.energy - lam) < 1e-12


def test_triangle_single_cell_isotropic():
    op, lat = build_triangle(1, 1)
    domain = [(0, 2), (0, 2), (0, 0.1)]
    op0, _ = build_triangle(1, 1, domain)
    lam, V, w = dense_ground(op0((1.0, 1.0, 0.0)))
    assert abs(lam + 0.75) < 1e-14 and V.shape[1] == 4
    np.testing.assert_allclose(w[4:], 0.75, atol=1e-14)
    assert lat.n_sites == 3 and lat.boundary == "periodic"


@pytest.mark.parametrize("Nx,Ny", [(1, 1), (2, 1), (2, 2)])
def test_inter_trimer_bond_count(Nx, Ny):
    op, lat = build_triangle(Nx, Ny)
    # each Heisenberg bond contributes 1/4 to the diagonal of the all-up state
    n_bonds = op.terms[3].diagonal()[-1] / 0.25
    assert n_bonds == pytest.approx(3 * Nx * Ny)


def test_triangle_commutes_with_total_sz():
    op, lat = build_triangle(2, 1)
    H = op((1.0, 1.0, 0.07))
    Sz = total_sz(lat.n_sites)
    v = np.random.default_rng(3).standard_normal(op.dim)
    assert np.linalg.norm(H @ (Sz @ v) - Sz @ (H @ v)) <= 1e-12


def test_momentum_grids():
    _, chain = build_rydberg(5)
    np.testing.assert_allclose(momentum_grid(chain)[:, 0], 2 * np.pi * np.arange(5) / 5)
    _, lat = build_triangle(2, 2)
    k = momentum_grid(lat)
    assert k.shape == (4, 2)
    np.testing.assert_allclose(k / np.pi, [[0, 0], [0, 1], [1, 0], [1, 1]])


def test_rydberg_structure_factor_all_excited():
    op, lat, sf = build_model("rydberg", 2)
    e = np.zeros(4)
    e[3] = 1.0
    S = sf.expectation(e, None)
    np.testing.assert_allclose(S, [2.0, 0.0], atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31), m=st.integers(1, 3))
def test_chain_structure_factor_positive_and_sum_rule(seed, m):
    op, lat, sf = build_model("rydberg", 5)
    psi = random_state(np.random.default_rng(seed), lat.dim, m)
    S = sf.expectation(psi, None)
    assert np.all(S.real >= -1e-12) and np.all(np.abs(S.imag) <= 1e-12)
    occupation = sum(np.real(np.vdot(psi[:, j], sf.factors[0][r] @ psi[:, j]))
                     for r in range(5) for j in range(m)) / m
    assert abs(S.real.sum() - occupation) <= 1e-12 * max(1.0, occupation)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_triangle_structure_factor_sum_rule(seed):
    op, lat, sf = build_model("triangle", 2, 1)
    psi = random_state(np.random.default_rng(seed), lat.dim)
    S = sf.expectation(psi, None)
    assert np.all(S.real >= -1e-12) and np.all(np.abs(S.imag) <= 1e-12)
    local = sum(np.vdot(psi[:, 0], sf.term(r, r) @ psi[:, 0]).real for r in range(lat.n_cells))
    assert abs(S.real.sum() - local) <= 1e-12 * max(1.0, abs(local))


def test_triangle_dot_product_factorization():
    # z, +, - components with weights (1, 1/2, 1/2) reproduce Sbar . Sbar
    _, lat, sf = build_model("triangle", 1, 1)
    Sbar2 = sum(heisenberg_bond(i, j, 3) for i in range(3) for j in range(3) if i != j) + 3 * 0.75 * np.eye(8)
    np.testing.assert_allclose(sf.term(0, 0).toarray(), Sbar2, atol=1e-14)


def test_single_cell_structure_factor_on_ground_doublets():
    op, lat, sf = build_model("triangle", 1, 1)
    g = solve_ground_manifold(op((1.0, 1.0, 0.05)))
    assert g.m == 4
    for j in range(4):
        assert sf.expectation(g.states[:, j], None).real[0] == pytest.approx(0.75, abs=1e-10)


def test_occupation_extremes():
    e = np.zeros(16)
    e[5] = 1.0
    assert occupation_profile(e) == 1.0
    assert occupation_profile(np.full(16, 0.25)) == pytest.approx(1 / 16)


def test_rydberg_z2_occupation_pattern():
    op, lat, sf = build_model("rydberg", 13)
    g = solve_ground_manifold(op((4.5, 1.5)))
    w, idx = occupation_profile(g.states, lat, return_index=True)
    assert w > 0.85 and idx == 0b1010101010101


def test_rydberg_z4_structure_factor_peak():
    op, lat, sf = build_model("rydberg", 13)
    g = solve_ground_manifold(op((4.5, 3.7)))
    S = sf.expectation(g.states, None).real
    k = momentum_grid(lat)[:, 0]
    peak = 1 + int(np.argmax(S[1:]))
    # closest commensurate momentum to 2 pi / 4
    assert abs(k[peak] - np.pi / 2) == pytest.approx(np.min(np.abs(k - np.pi / 2)))
    _, idx = occupation_profile(g.states, lat, return_index=True)
    assert idx == 0b1000100010001


def test_triangle_pi_zero_dominates_upper_right():
    op, lat, sf = build_model("triangle", 2, 2)
    g = solve_ground_manifold(op((1.8, 1.8, 0.1)))
    S = sf.expectation(g.states, None).real
    k = np.round(momentum_grid(lat) / np.pi).astype(int).tolist()
    assert S[k.index([1, 0])] > 5 * S[k.index([0, 1])]
