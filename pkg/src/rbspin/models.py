"""Benchmark spin models and their structure-factor observables.

Basis convention: site ``r`` (1-based) is bit ``r - 1`` of the basis-state
index; a set bit means "excited" (Rydberg) or "spin up" (triangle model).
With this ordering the single-site matrices below act on ``(bit 0, bit 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .affine import AffineObservable, AffineOperator, CoefficientMap, ObservableCoefficients
from .errors import ConfigError, StructuralError

__all__ = [
    "IDENTITY", "SIGMA_X", "SIGMA_Y", "SIGMA_Z", "NUMBER", "S_PLUS", "S_MINUS",
    "LatticeSpec",
    "lift_site_operator",
    "heisenberg_bond",
    "build_rydberg",
    "build_triangle",
    "momentum_grid",
    "rydberg_structure_factor",
    "triangle_structure_factor",
    "occupation_profile",
    "total_sz",
    "build_model",
    "model_coefficients",
]

IDENTITY = np.eye(2)
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]])
SIGMA_Y = np.array([[0.0, 1.0j], [-1.0j, 0.0]])
SIGMA_Z = np.diag([-1.0, 1.0])
NUMBER = np.diag([0.0, 1.0])
S_PLUS = np.array([[0.0, 0.0], [1.0, 0.0]])
S_MINUS = S_PLUS.T.copy()

RYDBERG_DOMAIN = ((0.0, 5.0), (0.5, 4.0))
TRIANGLE_DOMAIN = ((0.0, 2.0), (0.0, 2.0), (0.01, 0.1))


@dataclass(frozen=True)
class LatticeSpec:
    kind: str
    Nx: int
    Ny: int = 1
    sites_per_cell: int = 1
    boundary: str = "open"

    @property
    def n_cells(self) -> int:
        return self.Nx * self.Ny

    @property
    def n_sites(self) -> int:
        return self.n_cells * self.sites_per_cell

    @property
    def dim(self) -> int:
        return 2 ** self.n_sites

    def cell_positions(self) -> np.ndarray:
        """Integer cell coordinates; ``(n_cells, 1)`` for chains, ``(n_cells, 2)`` otherwise."""
        if self.kind == "rydberg-chain":
            return np.arange(1, self.Nx + 1, dtype=float)[:, None]
        return np.array([(x, y) for y in range(self.Ny) for x in range(self.Nx)], dtype=float)

    def site(self, x: int, y: int, alpha: int) -> int:
        """0-based bit index of basis element ``alpha`` (0, 1, 2) in cell ``(x, y)``, wrapped."""
        return self.sites_per_cell * ((x % self.Nx) + self.Nx * (y % self.Ny)) + alpha


def _lift(A, r, n_sites) -> sp.csr_matrix:
    A = np.asarray(A)
    if A.shape != (2, 2):
        raise StructuralError(f"site operator must be 2x2, got {A.shape}")
    if not 1 <= r <= n_sites:
        raise StructuralError(f"site {r} outside 1..{n_sites}")
    dim = 1 << n_sites
    idx = np.arange(dim)
    shift = r - 1
    bit = (idx >> shift) & 1
    dtype = np.result_type(A.dtype, float)
    if A[0, 1] == 0 and A[1, 0] == 0:
        return sp.diags(A[bit, bit].astype(dtype), format="csr")
    rows, cols, vals = [], [], []
    for b_out in (0, 1):
        v = A[b_out, bit]
        keep = v != 0
        target = (idx & ~(1 << shift)) | (b_out << shift)
        rows.append(target[keep])
        cols.append(idx[keep])
        vals.append(v[keep].astype(dtype))
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    )
    mat.sum_duplicates()
    return mat


def lift_site_operator(A, r: int, n_sites: int) -> sp.csr_matrix:
    """Embed the single-site Hermitian ``A`` at site ``r`` (1-based) of ``n_sites``.

    Built directly from bit masks; no Kronecker products are formed.
    """
    A = np.asarray(A)
    if A.shape == (2, 2) and not np.allclose(A, A.conj().T, rtol=0, atol=0):
        raise StructuralError("site operator must be Hermitian")
    return _lift(A, r, n_sites)


def heisenberg_bond(i: int, j: int, n_sites: int) -> sp.csr_matrix:
    """``S_i . S_j`` for 0-based bits ``i != j`` (spin-1/2, ``S = sigma / 2``)."""
    if i == j:
        raise StructuralError("a Heisenberg bond needs two distinct sites")
    dim = 1 << n_sites
    idx = np.arange(dim)
    bi = (idx >> i) & 1
    bj = (idx >> j) & 1
    diag = np.where(bi == bj, 0.25, -0.25)
    anti = bi != bj
    src = idx[anti]
    dst = src ^ ((1 << i) | (1 << j))
    rows = np.concatenate([idx, dst])
    cols = np.concatenate([idx, src])
    vals = np.concatenate([diag, np.full(src.size, 0.5)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))


def _popcount(idx: np.ndarray) -> np.ndarray:
    count = np.zeros_like(idx)
    work = idx.copy()
    while np.any(work):
        count += work & 1
        work >>= 1
    return count


def _rydberg_theta(mu):
    return (1.0, -mu[0], mu[1] ** 6)


def _triangle_theta(mu):
    return (mu[0], mu[1], 1.0, mu[2])


RYDBERG_PARAMS = ("Delta/Omega", "n_S")
TRIANGLE_PARAMS = ("J1/J3", "J2/J3", "J'/J3")


def build_rydberg(Nx: int, domain=None):
    """Rydberg chain scaled by the Rabi frequency; ``mu = (Delta/Omega, n_S)``.

    Terms: ``H_1 = 1/2 sum sigma^x``, ``H_2 = sum n``,
    ``H_3 = sum_{r<r'} (r'-r)^-6 n_r n_r'`` with open-chain distances and
    coefficients ``(1, -mu_1, mu_2**6)``.
    """
    if int(Nx) != Nx or Nx < 2:
        raise ConfigError(f"Rydberg chain needs Nx >= 2, got {Nx}")
    Nx = int(Nx)
    lattice = LatticeSpec("rydberg-chain", Nx, 1, 1, "open")
    dim = lattice.dim
    idx = np.arange(dim)
    occ = [((idx >> s) & 1).astype(float) for s in range(Nx)]

    h_x = None
    for r in range(1, Nx + 1):
        t = _lift(0.5 * SIGMA_X, r, Nx)
        h_x = t if h_x is None else h_x + t
    h_n = sp.diags(_popcount(idx).astype(float), format="csr")
    inter = np.zeros(dim)
    for a in range(Nx):
        for b in range(a + 1, Nx):
            inter += occ[a] * occ[b] * float(b - a) ** -6
    h_int = sp.diags(inter, format="csr")

    op = AffineOperator(
        terms=(h_x, h_n, h_int),
        theta=_rydberg_theta,
        domain=RYDBERG_DOMAIN if domain is None else domain,
        param_names=RYDBERG_PARAMS,
        term_names=("drive", "detuning", "interaction"),
    )
    return op, lattice


def _triangle_bonds(lattice: LatticeSpec):
    intra1, intra2, intra3, inter = [], [], [], []
    for y in range(lattice.Ny):
        for x in range(lattice.Nx):
            s = lattice.site
            intra1.append((s(x, y, 0), s(x, y, 1)))
            intra2.append((s(x, y, 1), s(x, y, 2)))
            intra3.append((s(x, y, 2), s(x, y, 0)))
            inter.append((s(x, y, 2), s(x + 1, y, 0)))
            inter.append((s(x, y, 1), s(x, y + 1, 0)))
            inter.append((s(x, y, 1), s(x, y + 1, 2)))
    return intra1, intra2, intra3, inter


def build_triangle(Nx: int, Ny: int, domain=None):
    """Square lattice of spin-1/2 trimers with periodic wrap in x and y.

    ``mu = (J1/J3, J2/J3, J'/J3)``; terms are the three intra-trimer bond
    sums and the inter-trimer bond sum, coefficients ``(mu_1, mu_2, 1, mu_3)``.
    """
    if int(Nx) != Nx or int(Ny) != Ny or Nx < 1 or Ny < 1:
        raise ConfigError(f"triangle lattice needs Nx, Ny >= 1, got {Nx}, {Ny}")
    lattice = LatticeSpec("triangle-lattice", int(Nx), int(Ny), 3, "periodic")
    n = lattice.n_sites
    terms = []
    for bonds in _triangle_bonds(lattice):
        acc = None
        for i, j in bonds:
            t = heisenberg_bond(i, j, n)
            acc = t if acc is None else acc + t
        terms.append(acc)

    op = AffineOperator(
        terms=tuple(terms),
        theta=_triangle_theta,
        domain=TRIANGLE_DOMAIN if domain is None else domain,
        param_names=TRIANGLE_PARAMS,
        term_names=("J1", "J2", "J3", "J'"),
    )
    return op, lattice


def momentum_grid(lattice: LatticeSpec) -> np.ndarray:
    """All momenta commensurate with the lattice, one row per momentum."""
    if lattice.kind == "rydberg-chain":
        return (2 * np.pi * np.arange(lattice.Nx) / lattice.Nx)[:, None]
    kx = 2 * np.pi * np.arange(lattice.Nx) / lattice.Nx
    ky = 2 * np.pi * np.arange(lattice.Ny) / lattice.Ny
    return np.array([(a, b) for a in kx for b in ky])


def _plane_wave_coefficients(positions, momenta, n_cells):
    # alpha[p, r, r'] = exp(-i (x_r - x_r') . k_p) / n_cells
    phase = np.exp(-1j * positions @ momenta.T)  # (n, P)
    return np.einsum("rp,sp->prs", phase, phase.conj()) / n_cells


def rydberg_structure_factor(Nx: int, lattice: LatticeSpec | None = None) -> AffineObservable:
    """``S(k) = 1/Nx sum_{r,r'} exp(-i(r-r')k) <n_r n_r'>`` on the momentum grid."""
    lattice = lattice or LatticeSpec("rydberg-chain", int(Nx), 1, 1, "open")
    if lattice.kind != "rydberg-chain" or lattice.Nx != Nx:
        raise StructuralError("lattice does not match a Rydberg chain of this length")
    momenta = momentum_grid(lattice)
    coeffs = _plane_wave_coefficients(lattice.cell_positions(), momenta, lattice.n_cells)
    coeffs.setflags(write=False)
    numbers = tuple(_lift(NUMBER, r, Nx) for r in range(1, Nx + 1))
    return AffineObservable(
        name="structure_factor",
        factors=(numbers,),
        weights=(1.0,),
        coefficients=lambda mu: coeffs,
        labels=momenta,
        parameter_free=True,
    )


def triangle_structure_factor(Nx: int, Ny: int, lattice: LatticeSpec | None = None) -> AffineObservable:
    """Trimer-spin structure factor ``S(k)`` built from ``Sbar_r . Sbar_r'``.

    The dot product is split as ``Sz Sz' + (S- S+' + S+ S-') / 2`` so that all
    factors stay real.
    """
    lattice = lattice or LatticeSpec("triangle-lattice", int(Nx), int(Ny), 3, "periodic")
    if lattice.kind != "triangle-lattice" or (lattice.Nx, lattice.Ny) != (Nx, Ny):
        raise StructuralError("lattice does not match this triangle lattice")
    n = lattice.n_sites
    comps = {"z": [], "+": [], "-": []}
    for y in range(Ny):
        for x in range(Nx):
            sites = [lattice.site(x, y, a) + 1 for a in range(3)]
            for key, local in (("z", 0.5 * SIGMA_Z), ("+", S_PLUS), ("-", S_MINUS)):
                acc = None
                for r in sites:
                    t = _lift(local, r, n)
                    acc = t if acc is None else acc + t
                comps[key].append(acc)
    momenta = momentum_grid(lattice)
    coeffs = _plane_wave_coefficients(lattice.cell_positions(), momenta, lattice.n_cells)
    coeffs.setflags(write=False)
    return AffineObservable(
        name="structure_factor",
        factors=(tuple(comps["z"]), tuple(comps["+"]), tuple(comps["-"])),
        weights=(1.0, 0.5, 0.5),
        coefficients=lambda mu: coeffs,
        labels=momenta,
        parameter_free=True,
    )


def occupation_profile(states, lattice: LatticeSpec | None = None, return_index=False):
    """Largest manifold-averaged weight of a single canonical basis state.

    ``max_i (1/m) sum_j |<e_i|Psi_j>|^2``; 1 for a basis state, ``1/dim`` for
    the uniform superposition.
    """
    states = np.asarray(states)
    if states.ndim == 1:
        states = states[:, None]
    if lattice is not None and states.shape[0] != lattice.dim:
        raise StructuralError(f"states have {states.shape[0]} rows, lattice dim is {lattice.dim}")
    weights = np.mean(np.abs(states) ** 2, axis=1)
    i = int(np.argmax(weights))
    return (float(weights[i]), i) if return_index else float(weights[i])


def total_sz(n_sites: int) -> sp.csr_matrix:
    idx = np.arange(1 << n_sites)
    return sp.diags(_popcount(idx) - 0.5 * n_sites, format="csr")


def build_model(kind: str, Nx: int, Ny: int = 1, domain=None):
    """``(operator, lattice, structure_factor)`` for ``kind`` in {"rydberg", "triangle"}."""
    if kind == "rydberg":
        op, lat = build_rydberg(Nx, domain)
        return op, lat, rydberg_structure_factor(Nx, lat)
    if kind == "triangle":
        op, lat = build_triangle(Nx, Ny, domain)
        return op, lat, triangle_structure_factor(Nx, Ny, lat)
    raise ConfigError(f"unknown model kind {kind!r}; expected 'rydberg' or 'triangle'")


def model_coefficients(kind: str, Nx: int, Ny: int = 1, domain=None):
    """Matrix-free ``(CoefficientMap, ObservableCoefficients)`` for a stored surrogate.

    Costs nothing in the Hilbert dimension; used to scan saved models.
    """
    if kind == "rydberg":
        lattice = LatticeSpec("rydberg-chain", int(Nx), 1, 1, "open")
        cmap = CoefficientMap(_rydberg_theta, RYDBERG_DOMAIN if domain is None else domain, 3, RYDBERG_PARAMS)
    elif kind == "triangle":
        lattice = LatticeSpec("triangle-lattice", int(Nx), int(Ny), 3, "periodic")
        cmap = CoefficientMap(_triangle_theta, TRIANGLE_DOMAIN if domain is None else domain, 4, TRIANGLE_PARAMS)
    else:
        raise ConfigError(f"unknown model kind {kind!r}; expected 'rydberg' or 'triangle'")
    momenta = momentum_grid(lattice)
    coeffs = _plane_wave_coefficients(lattice.cell_positions(), momenta, lattice.n_cells)
    coeffs.setflags(write=False)
    obs = ObservableCoefficients("structure_factor", lambda mu: coeffs, momenta, parameter_free=True)
    return cmap, obs
