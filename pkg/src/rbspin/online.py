"""Online stage: reduced eigenproblems, outputs and parameter scans.

Nothing here touches the full-dimensional basis except :func:`lift`,
:func:`warm_start_guess` and the optional occupation column of :func:`scan`.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .affine import AffineObservable, AffineOperator, as_point
from .basis import ReducedBasisModel
from .errors import RBSpinError, StateError
from .models import occupation_profile
from .truth import DEFAULT_SEED, TOL_DEGENERACY, random_block

__all__ = [
    "ReducedSolution",
    "reduced_ground",
    "observable_eval",
    "lift",
    "warm_start_guess",
    "scan",
    "ScanResult",
]

log = logging.getLogger(__name__)

_IMAG_TOL = 1e-10


@dataclass
class ReducedSolution:
    """Ritz value ``energy`` and ``b``-orthonormal coefficients ``phi`` (``N x m``)."""

    mu: np.ndarray
    energy: float
    phi: np.ndarray
    gap: float
    theta: np.ndarray

    @property
    def m(self) -> int:
        return self.phi.shape[1]


def _reduced_eigh(ht, theta, tol_degeneracy, k0=8):
    """Lowest cluster of ``sum_q theta_q ht_q`` (already whitened)."""
    A = np.tensordot(theta, ht, axes=1)
    N = A.shape[0]
    k = min(N, k0)
    while True:
        w, V = sla.eigh(A, subset_by_index=[0, k - 1], driver="evr", check_finite=False)
        m = int(np.sum(w - w[0] <= tol_degeneracy))
        if m < k or k == N:
            break
        k = min(N, 2 * k)
    gap = float(w[m] - w[0]) if m < len(w) else np.inf
    return float(w[0]), V[:, :m], gap


def reduced_ground(rbm: ReducedBasisModel, mu, operator: AffineOperator | None = None,
                   tol_degeneracy=TOL_DEGENERACY, theta=None) -> ReducedSolution:
    """Solve ``h(mu) phi = lambda b phi`` for the lowest eigenvalue cluster.

    Cost depends on ``N`` and ``Q`` only.  ``theta`` may be passed directly;
    otherwise it is evaluated from ``operator``.
    """
    if rbm.N == 0:
        raise StateError("reduced basis model is empty")
    mu = as_point(mu)
    if theta is None:
        if operator is None:
            raise StateError("need either an operator or explicit theta coefficients")
        theta = operator.coefficients(mu)
    L, ht = rbm.whitened()
    lam, y, gap = _reduced_eigh(ht, np.asarray(theta, dtype=float), tol_degeneracy)
    phi = sla.solve_triangular(L, y, lower=True, trans="T")
    return ReducedSolution(mu=mu, energy=lam, phi=phi, gap=gap, theta=np.asarray(theta, dtype=float))


def observable_eval(rbm: ReducedBasisModel, sol: ReducedSolution, obs: AffineObservable | str,
                    p=None, coefficients=None):
    """Manifold-averaged reduced output ``O_N(mu; p)``.

    Returns all outputs when ``p`` is None.  Values are complex; callers that
    need the physical value take the real part (the imaginary residue is
    round-off and is checked by :func:`scan`).
    """
    name = obs if isinstance(obs, str) else obs.name
    blocks = rbm.observables.get(name)
    if blocks is None:
        raise StateError(f"no reduced blocks for observable {name!r}; run precompute_observable first")
    corr = np.einsum("ia,rsij,ja->rs", sol.phi.conj(), blocks, sol.phi) / sol.m
    if coefficients is None:
        if isinstance(obs, str):
            raise StateError("coefficients are required when the observable is given by name")
        coefficients = obs.coefficients(sol.mu)
    vals = np.einsum("prs,rs->p", np.asarray(coefficients), corr)
    return vals if p is None else vals[p]


def lift(rbm: ReducedBasisModel, sol: ReducedSolution) -> np.ndarray:
    """Full-space Ritz vectors ``B phi``."""
    if rbm.basis is None:
        raise StateError("model was stored without its basis; lifting is unavailable")
    return rbm.basis @ sol.phi


def warm_start_guess(rbm: ReducedBasisModel | None, mu, operator: AffineOperator,
                     tol_degeneracy=TOL_DEGENERACY, seed=DEFAULT_SEED, extra=0) -> np.ndarray:
    """Initial block for a truth solve at ``mu``: the orthonormalized lifted Ritz vectors.

    The width is the predicted degeneracy ``m`` plus ``extra`` further Ritz
    vectors (useful as approximations of the eigenpairs above the cluster).
    An empty model yields a fixed-seed random vector (cold start).
    """
    if rbm is None or rbm.N == 0 or rbm.basis is None:
        return random_block(operator.dim, 1, seed=seed)
    sol = reduced_ground(rbm, mu, operator, tol_degeneracy)
    if extra > 0 and rbm.N > sol.m:
        L, ht = rbm.whitened()
        width = min(rbm.N, sol.m + extra)
        _, y = sla.eigh(np.tensordot(sol.theta, ht, axes=1), subset_by_index=[0, width - 1],
                        driver="evr", check_finite=False)
        block = rbm.basis @ sla.solve_triangular(L, y, lower=True, trans="T")
    else:
        block = lift(rbm, sol)
    q, _ = np.linalg.qr(block)
    return q


@dataclass
class ScanResult:
    """Per-point scan rows in grid order.

    ``outputs`` maps observable name to a real array ``(M, n_outputs)``;
    ``flags`` holds a semicolon-separated list of issues per row (empty if none).
    """

    points: np.ndarray
    energy: np.ndarray
    m: np.ndarray
    residual: np.ndarray
    gap: np.ndarray
    outputs: dict
    occupation: np.ndarray
    flags: list
    seconds: float

    def __len__(self):
        return len(self.points)


def _scan_point(rbm, operator, mu, observables, tol_degeneracy, with_occupation, coeff_cache):
    flags = []
    sol = reduced_ground(rbm, mu, operator, tol_degeneracy)
    res = rbm.residual_norm(sol.theta, sol.energy, sol.phi)
    outs = {}
    for obs in observables:
        coeffs = coeff_cache.get(obs.name)
        if coeffs is None:
            coeffs = obs.coefficients(mu)
        vals = observable_eval(rbm, sol, obs, coefficients=coeffs)
        imag = float(np.max(np.abs(vals.imag), initial=0.0))
        if imag > _IMAG_TOL * max(1.0, float(np.max(np.abs(vals.real), initial=0.0))):
            flags.append(f"imag:{obs.name}={imag:.1e}")
        outs[obs.name] = vals.real
    occ = np.nan
    if with_occupation:
        occ = occupation_profile(lift(rbm, sol))
    return sol, res, outs, occ, flags


def scan(rbm: ReducedBasisModel, operator: AffineOperator, points, observables=(),
         tol_degeneracy=TOL_DEGENERACY, with_occupation=None, threads=1,
         reference_m=None) -> ScanResult:
    """Evaluate the surrogate on every point of ``points`` (grid order is kept).

    Per-point failures are recorded in ``flags`` and the scan continues.
    ``reference_m`` (optional array) is compared against the reduced
    degeneracy and mismatches are flagged.
    """
    pts = points.points if hasattr(points, "points") else np.atleast_2d(np.asarray(points, float))
    M = len(pts)
    if with_occupation is None:
        with_occupation = rbm.basis is not None
    t0 = time.perf_counter()
    energy = np.full(M, np.nan)
    mult = np.zeros(M, dtype=int)
    resid = np.full(M, np.nan)
    gaps = np.full(M, np.nan)
    occ = np.full(M, np.nan)
    outputs = {o.name: np.full((M, o.n_outputs), np.nan) for o in observables}
    flags = [[] for _ in range(M)]
    coeff_cache = {o.name: np.asarray(o.coefficients(pts[0])) for o in observables if o.parameter_free}
    rbm.whitened()

    def work(i):
        try:
            return i, _scan_point(rbm, operator, pts[i], observables, tol_degeneracy,
                                  with_occupation, coeff_cache), None
        except (RBSpinError, np.linalg.LinAlgError, ValueError) as exc:
            return i, None, exc

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(M)))
    else:
        results = [work(i) for i in range(M)]

    for i, out, exc in results:
        if exc is not None:
            flags[i].append(f"error:{type(exc).__name__}:{exc}")
            log.warning("scan point %d failed: %s", i, exc)
            continue
        sol, res, outs, oc, fl = out
        energy[i], mult[i], resid[i], gaps[i], occ[i] = sol.energy, sol.m, res, sol.gap, oc
        for k, v in outs.items():
            outputs[k][i] = v
        flags[i].extend(fl)
        if reference_m is not None and int(reference_m[i]) != sol.m:
            flags[i].append(f"m_mismatch:{int(reference_m[i])}!={sol.m}")
    return ScanResult(
        points=pts, energy=energy, m=mult, residual=resid, gap=gaps, outputs=outputs,
        occupation=occ, flags=[";".join(f) for f in flags], seconds=time.perf_counter() - t0,
    )
