"""Affine parameter dependence of operators and observables.

A Hamiltonian family is stored as ``H(mu) = sum_q theta_q(mu) H_q`` with
fixed sparse Hermitian terms ``H_q`` and cheap scalar coefficient functions.
Observables follow the same pattern, ``O(p) = sum_r alpha_r(mu; p) O_r``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, StructuralError

__all__ = [
    "as_point",
    "ParameterGrid",
    "AffineOperator",
    "AffineObservable",
    "CoefficientMap",
    "ObservableCoefficients",
    "evaluate_hamiltonian",
    "theta_eval",
    "apply",
    "is_hermitian",
]


def as_point(mu, dim=None) -> np.ndarray:
    """Validate a parameter point and return it as a float array."""
    arr = np.atleast_1d(np.asarray(mu, dtype=float))
    if arr.ndim != 1:
        raise StructuralError(f"parameter point must be one-dimensional, got shape {arr.shape}")
    if dim is not None and arr.size != dim:
        raise StructuralError(f"parameter point has {arr.size} coordinates, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"parameter point has non-finite coordinates: {arr}")
    return arr


def _as_domain(domain) -> np.ndarray:
    box = np.asarray(domain, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2:
        raise StructuralError("domain must be a sequence of (low, high) pairs")
    if np.any(box[:, 0] > box[:, 1]):
        raise StructuralError(f"domain has low > high: {box.tolist()}")
    return box


def _check_inside(mu: np.ndarray, box: np.ndarray, rtol=1e-12):
    slack = rtol * np.maximum(1.0, np.abs(box).max(axis=1))
    if np.any(mu < box[:, 0] - slack) or np.any(mu > box[:, 1] + slack):
        raise DomainError(f"mu={tuple(mu.tolist())} outside domain {box.tolist()}")


@dataclass(frozen=True)
class ParameterGrid:
    """Cartesian product of sorted per-dimension axes.

    Points are enumerated row-major: the last axis varies fastest.
    """

    axes: tuple

    def __post_init__(self):
        axes = []
        for ax in self.axes:
            a = np.atleast_1d(np.asarray(ax, dtype=float))
            if a.ndim != 1 or a.size == 0:
                raise StructuralError("grid axes must be non-empty 1-d sequences")
            if not np.all(np.isfinite(a)):
                raise DomainError("grid axes must be finite")
            if np.any(np.diff(a) <= 0):
                raise StructuralError("grid axes must be strictly increasing")
            a.setflags(write=False)
            axes.append(a)
        object.__setattr__(self, "axes", tuple(axes))

    @classmethod
    def uniform(cls, domain, counts: Sequence[int]) -> "ParameterGrid":
        """``counts[i]`` equispaced points per axis, endpoints included."""
        box = _as_domain(domain)
        if len(counts) != len(box):
            raise StructuralError("one count per domain dimension required")
        axes = []
        for (lo, hi), n in zip(box, counts):
            if n < 1:
                raise StructuralError("grid counts must be >= 1")
            axes.append(np.array([lo]) if n == 1 else np.linspace(lo, hi, int(n)))
        return cls(tuple(axes))

    @classmethod
    def interleaved(cls, domain, counts: Sequence[int]) -> "ParameterGrid":
        """Midpoints of the uniform grid with ``counts + 1`` points per axis.

        ``interleaved(P, (49, 49))`` sits strictly between the points of
        ``uniform(P, (50, 50))``, which is the usual train/test pairing.
        """
        box = _as_domain(domain)
        axes = []
        for (lo, hi), n in zip(box, counts):
            edges = np.linspace(lo, hi, int(n) + 1)
            axes.append(0.5 * (edges[1:] + edges[:-1]))
        return cls(tuple(axes))

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(a.size for a in self.axes)

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def __len__(self):
        return int(np.prod(self.shape))

    def __iter__(self):
        for p in itertools.product(*self.axes):
            yield np.array(p)

    def check_inside(self, domain):
        box = _as_domain(domain)
        if len(box) != self.ndim:
            raise StructuralError(f"grid has {self.ndim} axes, domain has {len(box)}")
        for a, (lo, hi) in zip(self.axes, box):
            slack = 1e-12 * max(1.0, abs(lo), abs(hi))
            if a[0] < lo - slack or a[-1] > hi + slack:
                raise DomainError(f"grid axis [{a[0]}, {a[-1]}] leaves domain [{lo}, {hi}]")

    def index_of(self, mu, atol=1e-12) -> int:
        """Row-major index of ``mu`` in the grid; ``-1`` if absent."""
        mu = as_point(mu, self.ndim)
        flat = 0
        for a, x in zip(self.axes, mu):
            hits = np.flatnonzero(np.abs(a - x) <= atol * max(1.0, abs(x)))
            if hits.size == 0:
                return -1
            flat = flat * a.size + int(hits[0])
        return flat


def is_hermitian(mat, atol=0.0) -> bool:
    diff = mat - mat.conj().T
    if sp.issparse(diff):
        return diff.nnz == 0 or np.abs(diff.data).max() <= atol
    return np.abs(diff).max(initial=0.0) <= atol


@dataclass(frozen=True)
class AffineOperator:
    """``H(mu) = sum_q theta(mu)[q] * terms[q]``.

    ``terms`` are real symmetric CSR matrices (both benchmark models are
    real), ``theta`` maps a parameter point to ``Q`` real coefficients and
    ``domain`` is the box ``[(lo, hi), ...]`` of admissible points.
    """

    terms: tuple
    theta: Callable[[np.ndarray], Sequence[float]]
    domain: np.ndarray
    param_names: tuple = ()
    term_names: tuple = ()

    def __post_init__(self):
        if len(self.terms) < 1:
            raise StructuralError("an affine operator needs at least one term")
        terms = tuple(sp.csr_matrix(t) for t in self.terms)
        dim = terms[0].shape[0]
        for t in terms:
            if t.shape != (dim, dim):
                raise StructuralError(f"term shape {t.shape} differs from ({dim}, {dim})")
            if not is_hermitian(t):
                raise StructuralError("affine terms must be exactly Hermitian")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "domain", _as_domain(self.domain))

    @property
    def dim(self) -> int:
        return self.terms[0].shape[0]

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @property
    def n_params(self) -> int:
        return len(self.domain)

    def coefficients(self, mu) -> np.ndarray:
        mu = as_point(mu, self.n_params)
        _check_inside(mu, self.domain)
        th = np.asarray(self.theta(mu), dtype=float)
        if th.shape != (self.n_terms,) or not np.all(np.isfinite(th)):
            raise StructuralError(f"theta returned {th!r}, expected {self.n_terms} finite reals")
        return th

    def combine(self, coeffs) -> sp.csr_matrix:
        """Explicit sparse sum ``sum_q coeffs[q] H_q``."""
        coeffs = np.asarray(coeffs)
        if coeffs.shape != (self.n_terms,):
            raise StructuralError(f"need {self.n_terms} coefficients, got {coeffs.shape}")
        out = coeffs[0] * self.terms[0]
        for c, t in zip(coeffs[1:], self.terms[1:]):
            out = out + c * t
        out = sp.csr_matrix(out)
        out.sum_duplicates()
        return out

    def __call__(self, mu) -> sp.csr_matrix:
        return self.combine(self.coefficients(mu))

    def coefficient_map(self) -> "CoefficientMap":
        return CoefficientMap(self.theta, self.domain, self.n_terms, self.param_names)


@dataclass(frozen=True)
class CoefficientMap:
    """The scalar part of an affine operator: ``theta`` and its domain, no matrices.

    Enough for online evaluation of a stored surrogate.
    """

    theta: Callable[[np.ndarray], Sequence[float]]
    domain: np.ndarray
    n_terms: int
    param_names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "domain", _as_domain(self.domain))

    @property
    def n_params(self) -> int:
        return len(self.domain)

    def coefficients(self, mu) -> np.ndarray:
        mu = as_point(mu, self.n_params)
        _check_inside(mu, self.domain)
        th = np.asarray(self.theta(mu), dtype=float)
        if th.shape != (self.n_terms,) or not np.all(np.isfinite(th)):
            raise StructuralError(f"theta returned {th!r}, expected {self.n_terms} finite reals")
        return th


def theta_eval(op: AffineOperator, mu) -> np.ndarray:
    return op.coefficients(mu)


def evaluate_hamiltonian(op: AffineOperator, mu) -> sp.csr_matrix:
    return op(mu)


def apply(mat, v) -> np.ndarray:
    """Matrix-vector (or matrix-block) product with a shape check."""
    v = np.asarray(v)
    if v.ndim not in (1, 2) or v.shape[0] != mat.shape[1]:
        raise StructuralError(f"cannot apply {mat.shape} operator to array of shape {v.shape}")
    return mat @ v


@dataclass(frozen=True)
class AffineObservable:
    """Family ``O(p) = sum_{r,r'} alpha(mu; p)[r, r'] O_{r,r'}``.

    The ``n**2`` terms are stored in factored form: for each component ``a``
    a list of one-sided operators ``factors[a][r]`` with weight
    ``weights[a]``, so that ``O_{r,r'} = sum_a weights[a] F_{a,r}^dagger F_{a,r'}``.
    ``coefficients(mu)`` returns all output rows ``alpha(mu; p)`` stacked as an
    array of shape ``(n_outputs, n, n)``; ``labels`` names the outputs (for
    structure factors, the momenta).  ``parameter_free`` marks coefficients
    that do not depend on ``mu`` so scans evaluate them once.
    """

    name: str
    factors: tuple
    weights: tuple
    coefficients: Callable[[np.ndarray], np.ndarray]
    labels: np.ndarray
    parameter_free: bool = False
    dim: int = field(init=False)

    def __post_init__(self):
        if len(self.factors) != len(self.weights) or not self.factors:
            raise StructuralError("one weight per factor component required")
        n = len(self.factors[0])
        comps = []
        for comp in self.factors:
            if len(comp) != n:
                raise StructuralError("factor components must have equal length")
            comps.append(tuple(sp.csr_matrix(f) for f in comp))
        dim = comps[0][0].shape[0]
        for comp in comps:
            for f in comp:
                if f.shape != (dim, dim):
                    raise StructuralError("observable factors must share one dimension")
        object.__setattr__(self, "factors", tuple(comps))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "labels", np.asarray(self.labels))
        object.__setattr__(self, "dim", dim)

    @property
    def n_groups(self) -> int:
        return len(self.factors[0])

    @property
    def n_terms(self) -> int:
        return self.n_groups ** 2

    @property
    def n_outputs(self) -> int:
        return len(self.labels)

    def alpha(self, mu, p) -> np.ndarray:
        """Flattened coefficient list ``alpha_r(mu; p)``, ``r = (r1, r2)`` row-major."""
        return np.asarray(self.coefficients(mu))[p].ravel()

    def term(self, r1: int, r2: int) -> sp.csr_matrix:
        """Materialize ``O_{r1,r2}``; meant for checks on small systems."""
        out = None
        for w, comp in zip(self.weights, self.factors):
            t = w * (comp[r1].conj().T @ comp[r2])
            out = t if out is None else out + t
        return sp.csr_matrix(out)

    def correlations(self, states) -> np.ndarray:
        """Manifold-averaged ``(1/m) sum_i psi_i^dagger O_{r,r'} psi_i`` for all pairs."""
        states = np.asarray(states)
        if states.ndim == 1:
            states = states[:, None]
        if states.shape[0] != self.dim:
            raise StructuralError(f"states have {states.shape[0]} rows, observable dim is {self.dim}")
        m = states.shape[1]
        n = self.n_groups
        corr = np.zeros((n, n), dtype=complex)
        for w, comp in zip(self.weights, self.factors):
            # (n, dim*m) stack of F_r psi
            fv = np.stack([(f @ states).ravel() for f in comp])
            corr += w * (fv.conj() @ fv.T)
        return corr / m

    def reduce(self, left, right=None) -> np.ndarray:
        """Reduced blocks ``left^dagger O_{r,r'} right`` as an ``(n, n, N1, N2)`` array."""
        right = left if right is None else right
        n = self.n_groups
        out = None
        for w, comp in zip(self.weights, self.factors):
            fl = [f @ left for f in comp]
            fr = fl if right is left else [f @ right for f in comp]
            blk = np.empty((n, n, left.shape[1], right.shape[1]), dtype=np.result_type(left, right, float))
            for i in range(n):
                for j in range(n):
                    blk[i, j] = fl[i].conj().T @ fr[j]
            out = w * blk if out is None else out + w * blk
        return out

    def evaluate_correlations(self, corr, mu) -> np.ndarray:
        """Contract a correlation matrix with ``alpha(mu; p)`` for every output ``p``."""
        return np.einsum("prs,rs->p", np.asarray(self.coefficients(mu)), corr)

    def expectation(self, states, mu) -> np.ndarray:
        return self.evaluate_correlations(self.correlations(states), mu)

    def coefficient_side(self) -> "ObservableCoefficients":
        return ObservableCoefficients(self.name, self.coefficients, self.labels, self.parameter_free)


@dataclass(frozen=True)
class ObservableCoefficients:
    """Coefficient side of an observable (``alpha`` and output labels) without operators."""

    name: str
    coefficients: Callable[[np.ndarray], np.ndarray]
    labels: np.ndarray
    parameter_free: bool = False

    @property
    def n_outputs(self) -> int:
        return len(self.labels)
