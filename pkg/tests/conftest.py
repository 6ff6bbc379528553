"""Shared fixtures and independent oracles.

The Kronecker oracle builds every operator from explicit dense tensor
products, ordered so that site ``r`` is bit ``r - 1`` of the basis index:
the last site is the leftmost factor.
"""
from functools import reduce

import numpy as np
import pytest

from rbspin.affine import ParameterGrid
from rbspin.models import build_rydberg, build_triangle, rydberg_structure_factor, triangle_structure_factor
from rbspin.offline import GreedyConfig, greedy_train

I2 = np.eye(2)
SX = np.array([[0.0, 1.0], [1.0, 0.0]])
SY = np.array([[0.0, 1.0j], [-1.0j, 0.0]])
SZ = np.diag([-1.0, 1.0])
NUM = np.diag([0.0, 1.0])


def kron_site(A, r, n_sites):
    """Dense ``A`` on site ``r`` (1-based) via explicit Kronecker products."""
    factors = [A if s == r else I2 for s in range(n_sites, 0, -1)]
    return reduce(np.kron, factors)


def kron_heisenberg(i, j, n_sites):
    """``S_i . S_j`` for 1-based sites with ``S = sigma / 2``."""
    return sum(0.25 * kron_site(P, i, n_sites) @ kron_site(P, j, n_sites) for P in (SX, SY, SZ))


def kron_rydberg(Nx, mu):
    H = sum(0.5 * kron_site(SX, r, Nx) for r in range(1, Nx + 1))
    H = H - mu[0] * sum(kron_site(NUM, r, Nx) for r in range(1, Nx + 1))
    for r in range(1, Nx + 1):
        for rp in range(r + 1, Nx + 1):
            H = H + (mu[1] / (rp - r)) ** 6 * kron_site(NUM, r, Nx) @ kron_site(NUM, rp, Nx)
    return H


def kron_triangle(Nx, Ny, mu):
    """Triangle lattice with explicit site labels ``3*(x + Nx*y) + alpha + 1``."""
    n = 3 * Nx * Ny

    def site(x, y, a):
        return 3 * ((x % Nx) + Nx * (y % Ny)) + a + 1

    H = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for y in range(Ny):
        for x in range(Nx):
            H += mu[0] * kron_heisenberg(site(x, y, 0), site(x, y, 1), n)
            H += mu[1] * kron_heisenberg(site(x, y, 1), site(x, y, 2), n)
            H += kron_heisenberg(site(x, y, 2), site(x, y, 0), n)
            H += mu[2] * kron_heisenberg(site(x, y, 2), site(x + 1, y, 0), n)
            H += mu[2] * kron_heisenberg(site(x, y, 1), site(x, y + 1, 0), n)
            H += mu[2] * kron_heisenberg(site(x, y, 1), site(x, y + 1, 2), n)
    return H


def dense_ground(H, tol=1e-8):
    H = H.toarray() if hasattr(H, "toarray") else np.asarray(H)
    w, V = np.linalg.eigh(H)
    m = int(np.sum(w - w[0] <= tol))
    return w[0], V[:, :m], w


def random_state(rng, dim, m=1):
    X = rng.standard_normal((dim, m)) + 1j * rng.standard_normal((dim, m))
    q, _ = np.linalg.qr(X)
    return q


@pytest.fixture(scope="session")
def rydberg8():
    op, lat = build_rydberg(8)
    return op, lat, rydberg_structure_factor(8, lat)


@pytest.fixture(scope="session")
def triangle_1x1():
    op, lat = build_triangle(1, 1)
    return op, lat, triangle_structure_factor(1, 1, lat)


@pytest.fixture(scope="session")
def triangle_2x1():
    op, lat = build_triangle(2, 1)
    return op, lat, triangle_structure_factor(2, 1, lat)


@pytest.fixture(scope="session")
def trained_rydberg8(rydberg8):
    """Small greedy run (Rydberg Nx=8, 8x8 grid) with its per-iteration snapshots of N."""
    op, lat, sf = rydberg8
    grid = ParameterGrid.uniform(op.domain, (8, 8))
    cfg = GreedyConfig(grid, tol=1e-9, n_f=30)
    rbm = greedy_train(op, [sf], cfg)
    return rbm, grid
