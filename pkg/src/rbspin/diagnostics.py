"""Validation studies: snapshot SVD decay and surrogate error metrics."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .affine import AffineOperator
from .basis import ReducedBasisModel
from .errors import ConfigError, StructuralError
from .online import lift, reduced_ground, warm_start_guess
from .truth import DEFAULT_SEED, DENSE_CAP, MAX_ITER, TOL_DEGENERACY, TOL_RESID, solve_ground_manifold

__all__ = [
    "truth_sweep",
    "snapshot_svd",
    "err_val",
    "err_vec",
    "err_sf",
    "projector_distance",
    "ErrorReport",
    "error_report",
    "basis_size_for",
]

log = logging.getLogger(__name__)

# relative eigenvalue errors switch to absolute below this |lambda|
_ZERO_ENERGY = 1e-14
# memory cap (bytes) for forming the snapshot matrix explicitly
SNAPSHOT_BYTES_CAP = 2 * 1024 ** 3


def _points(grid):
    return grid.points if hasattr(grid, "points") else np.atleast_2d(np.asarray(grid, dtype=float))


def truth_sweep(op: AffineOperator, grid, strategy="neighbor", rbm: ReducedBasisModel | None = None,
                tol_resid=TOL_RESID, tol_degeneracy=TOL_DEGENERACY, seed=DEFAULT_SEED,
                callback=None, keep_states=True, dense_cap=DENSE_CAP, max_iter=MAX_ITER):
    """Truth solves over ``grid`` in grid order.

    ``strategy`` picks the initial guess: ``"neighbor"`` reuses the previous
    point's manifold, ``"surrogate"`` lifts the reduced ground cluster of
    ``rbm`` plus the next Ritz vector (so the gap above the cluster starts
    out resolved), ``"cold"`` uses the fixed-seed random block.  ``callback(i, manifold)``
    is called after each solve.

    Returns the list of manifolds (``states`` dropped unless ``keep_states``)
    and the total iteration count.
    """
    if strategy not in ("neighbor", "surrogate", "cold"):
        raise ConfigError(f"unknown warm-start strategy {strategy!r}")
    if strategy == "surrogate" and (rbm is None or rbm.basis is None):
        raise ConfigError("surrogate warm starts need a model with its basis")
    out = []
    prev = None
    total = 0
    for i, mu in enumerate(_points(grid)):
        if strategy == "surrogate":
            guess = warm_start_guess(rbm, mu, op, tol_degeneracy, seed, extra=1)
        elif strategy == "neighbor":
            guess = prev
        else:
            guess = None
        man = solve_ground_manifold(op(mu), guess, tol_resid=tol_resid, tol_degeneracy=tol_degeneracy,
                                    seed=seed, mu=mu, dense_cap=dense_cap, max_iter=max_iter)
        total += man.iterations
        prev = man.states
        if callback is not None:
            callback(i, man)
        if not keep_states:
            man.states = np.zeros((0, man.m))
        out.append(man)
    return out, total


def snapshot_svd(op: AffineOperator, grid, tol_resid=TOL_RESID, tol_degeneracy=TOL_DEGENERACY,
                 seed=DEFAULT_SEED, method="auto", bytes_cap=SNAPSHOT_BYTES_CAP, rbm=None, **solver):
    """Normalized singular values of the snapshot matrix ``[Psi(mu_1) | ... ]``.

    ``method="direct"`` takes the SVD of the stacked manifolds; ``"gram"``
    diagonalizes ``A^T A`` instead, which needs less memory but cannot
    resolve ratios below about ``1e-8``.  ``"auto"`` uses the direct route
    whenever the snapshot matrix fits in ``bytes_cap``.  A trained ``rbm``
    (with basis) only speeds up the truth solves through warm starts.
    """
    pts = _points(grid)
    if method not in ("auto", "direct", "gram"):
        raise ConfigError(f"unknown SVD method {method!r}")
    cols = []
    use_gram = method == "gram"

    def collect(i, man):
        nonlocal use_gram
        cols.append(man.states)
        if method == "auto" and not use_gram:
            total = sum(c.size for c in cols) * 8
            if total > bytes_cap:
                log.warning("snapshot matrix exceeds %d bytes; switching to the Gram route", bytes_cap)
                use_gram = True

    strategy = "surrogate" if rbm is not None and rbm.basis is not None else "neighbor"
    truth_sweep(op, pts, strategy, rbm=rbm, tol_resid=tol_resid, tol_degeneracy=tol_degeneracy,
                seed=seed, callback=collect, keep_states=False, **solver)
    A = np.hstack(cols)
    if use_gram:
        G = A.T @ A
        w = np.linalg.eigvalsh(0.5 * (G + G.T))[::-1]
        s = np.sqrt(np.clip(w, 0.0, None))
    else:
        s = np.linalg.svd(A, compute_uv=False)
    return s / s[0]


def basis_size_for(sigma, threshold) -> int:
    """Number of normalized singular values at or above ``threshold``."""
    return int(np.sum(np.asarray(sigma) >= threshold))


def err_val(lam, lam_rb):
    """Relative eigenvalue error; absolute (and flagged) when ``|lam| < 1e-14``.

    Returns ``(error, flagged)``.
    """
    if abs(lam) < _ZERO_ENERGY:
        return abs(lam - lam_rb), True
    return abs(lam - lam_rb) / abs(lam), False


def projector_distance(psi, phi) -> float:
    """``||P - P'||_F / ||P||_F`` for orthonormal blocks, without forming projectors.

    Uses ``||P - P'||_F^2 = m + m' - 2 ||psi^H phi||_F^2``, evaluated as
    ``||phi - psi (psi^H phi)||^2 + ||psi - phi (phi^H psi)||^2`` so that
    nearly equal subspaces do not lose digits to cancellation.
    """
    psi = np.asarray(psi)
    phi = np.asarray(phi)
    if psi.ndim == 1:
        psi = psi[:, None]
    if phi.ndim == 1:
        phi = phi[:, None]
    if psi.shape[0] != phi.shape[0]:
        raise StructuralError("manifolds live in different spaces")
    cross = psi.conj().T @ phi
    a = np.linalg.norm(phi - psi @ cross) ** 2
    b = np.linalg.norm(psi - phi @ cross.conj().T) ** 2
    return float(np.sqrt((a + b) / psi.shape[1]))


def err_vec(psi, phi) -> float:
    return projector_distance(psi, phi)


def err_sf(S, S_rb):
    """Relative Frobenius mismatch; absolute (and flagged) for a zero truth norm.

    Returns ``(error, flagged)``.
    """
    S = np.asarray(S)
    S_rb = np.asarray(S_rb)
    diff = float(np.linalg.norm(S - S_rb))
    ref = float(np.linalg.norm(S))
    if ref == 0.0:
        return diff, True
    return diff / ref, False


@dataclass
class ErrorReport:
    """Errors of a surrogate against truth solves over a test grid.

    Fields ``err_*`` are maxima and ``mean_*`` means over the grid;
    ``per_point`` holds one row per point (``mu``, truth and reduced energy
    and degeneracy, the three errors, the residual and flags).
    """

    points: np.ndarray
    err_val: float
    err_vec: float
    err_sf: float
    mean_val: float
    mean_vec: float
    mean_sf: float
    max_residual: float
    truth_iterations: int
    per_point: list = field(default_factory=list)
    seconds: float = 0.0

    def summary(self) -> dict:
        return {
            "n_points": int(len(self.points)),
            "err_val": self.err_val,
            "err_vec": self.err_vec,
            "err_sf": self.err_sf,
            "mean_val": self.mean_val,
            "mean_vec": self.mean_vec,
            "mean_sf": self.mean_sf,
            "max_residual": self.max_residual,
            "truth_iterations": self.truth_iterations,
            "m_mismatches": int(sum(1 for r in self.per_point if r["m"] != r["m_rb"])),
            "flagged": int(sum(1 for r in self.per_point if r["flags"])),
            "seconds": self.seconds,
        }


def error_report(rbm: ReducedBasisModel, op: AffineOperator, grid, observable=None,
                 strategy="surrogate", tol_resid=TOL_RESID, tol_degeneracy=TOL_DEGENERACY,
                 seed=DEFAULT_SEED, vectors=True, **solver) -> ErrorReport:
    """Compare ``rbm`` with truth solves at every point of ``grid``.

    ``vectors`` (needs the basis) enables the projector error; ``observable``
    (reduced blocks must be present) enables the structure-factor error.
    Truth solves are warm started according to ``strategy``; ``solver``
    keywords (``dense_cap``, ``max_iter``) go to :func:`truth_sweep`.
    """
    t0 = time.perf_counter()
    pts = _points(grid)
    use_vec = vectors and rbm.basis is not None
    if strategy == "surrogate" and rbm.basis is None:
        strategy = "neighbor"
    rows = []

    def per_point(i, man):
        mu = pts[i]
        sol = reduced_ground(rbm, mu, op, tol_degeneracy)
        ev, fv = err_val(man.energy, sol.energy)
        flags = ["abs_val"] if fv else []
        row = {
            "mu": mu.tolist(),
            "energy": man.energy,
            "energy_rb": sol.energy,
            "m": man.m,
            "m_rb": sol.m,
            "err_val": ev,
            "err_vec": np.nan,
            "err_sf": np.nan,
            "residual": rbm.residual_norm(sol.theta, sol.energy, sol.phi),
            "truth_iterations": man.iterations,
        }
        if man.m != sol.m:
            flags.append("m_mismatch")
        if use_vec:
            row["err_vec"] = projector_distance(man.states, lift(rbm, sol))
        if observable is not None:
            from .online import observable_eval

            S = observable.expectation(man.states, mu).real
            S_rb = observable_eval(rbm, sol, observable).real
            es, fs = err_sf(S, S_rb)
            row["err_sf"] = es
            if fs:
                flags.append("abs_sf")
        row["flags"] = ";".join(flags)
        rows.append(row)

    _, total = truth_sweep(op, pts, strategy, rbm=rbm, tol_resid=tol_resid,
                           tol_degeneracy=tol_degeneracy, seed=seed, callback=per_point,
                           keep_states=False, **solver)

    def agg(key):
        vals = np.array([r[key] for r in rows], dtype=float)
        if np.all(np.isnan(vals)):
            return np.nan, np.nan
        return float(np.nanmax(vals)), float(np.nanmean(vals))

    ev, mv = agg("err_val")
    ex, mx = agg("err_vec")
    es, ms = agg("err_sf")
    return ErrorReport(
        points=pts, err_val=ev, err_vec=ex, err_sf=es, mean_val=mv, mean_vec=mx, mean_sf=ms,
        max_residual=float(max(r["residual"] for r in rows)), truth_iterations=total,
        per_point=rows, seconds=time.perf_counter() - t0,
    )
