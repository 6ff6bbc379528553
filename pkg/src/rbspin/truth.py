"""Exact ("truth") ground-state manifolds of sparse Hermitian matrices.

The iterative path is a blocked LOBPCG with soft locking and a diagonal
preconditioner.  The number of targeted eigenpairs grows until the lowest
eigenvalue cluster is separated from the next eigenvalue by more than the
degeneracy tolerance.  Non-convergence falls back to dense diagonalization
when the matrix is small enough.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import SolverError, StructuralError

__all__ = [
    "GroundStateManifold",
    "LobpcgResult",
    "lobpcg",
    "solve_ground_manifold",
    "dense_fallback",
    "dense_ground_manifold",
    "random_block",
    "DEFAULT_SEED",
]

log = logging.getLogger(__name__)

DEFAULT_SEED = 20220511
TOL_RESID = 1e-10
TOL_DEGENERACY = 1e-8
DENSE_CAP = 2 ** 14
MAX_ITER = 1000
GROWTH_STEP = 4
N_GUARD = 2
MAX_GUARD = 26
STALL_CHUNK = 60
# residual target for eigenpairs above the ground cluster; they only certify the gap
TOL_CERT = 1e-7


@dataclass
class GroundStateManifold:
    """Lowest eigenvalue ``energy`` of ``H(mu)`` with all ``m`` eigenvectors.

    ``gap`` is the distance to the next eigenvalue found by the solver; it
    exceeds the degeneracy tolerance, which is what certifies ``m``.
    """

    energy: float
    states: np.ndarray
    gap: float
    mu: np.ndarray | None = None
    iterations: int = 0
    converged: bool = True
    method: str = "iterative"
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def m(self) -> int:
        return self.states.shape[1]

    @property
    def solver_info(self) -> dict:
        return {"iterations": self.iterations, "converged": self.converged, "method": self.method}


@dataclass
class LobpcgResult:
    values: np.ndarray
    vectors: np.ndarray
    residual_norms: np.ndarray
    iterations: int
    converged: bool


def random_block(dim, width, seed=DEFAULT_SEED) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((dim, width))


def _orthonormalize(Z, drop=1e-12):
    """Orthonormal basis of range(Z) by two SVQB passes.

    Directions whose Gram eigenvalue falls below ``drop`` (relative) are
    discarded, so numerically dependent columns never enter the search space.
    """
    if Z.shape[1] == 0:
        return Z
    for _ in range(2):
        norms = np.linalg.norm(Z, axis=0)
        keep = norms > 0
        if not np.all(keep):
            Z, norms = Z[:, keep], norms[keep]
        if Z.shape[1] == 0:
            return Z
        Z = Z / norms
        G = Z.conj().T @ Z
        s, V = np.linalg.eigh(0.5 * (G + G.conj().T))
        good = s > drop * s[-1]
        Z = Z @ (V[:, good] / np.sqrt(s[good]))
    return Z


def _project_out(Z, Q):
    if Q is None or Q.shape[1] == 0 or Z.shape[1] == 0:
        return Z
    for _ in range(2):
        Z = Z - Q @ (Q.conj().T @ Z)
    return Z


def _jacobi(diag):
    def precond(R, theta):
        denom = np.abs(diag[:, None] - theta[None, :])
        return R / np.maximum(denom, 1e-1)

    return precond


def lobpcg(A, X, precond=None, tol=TOL_RESID, maxiter=MAX_ITER, n_required=None,
           tol_cert=None, tol_degeneracy=None) -> LobpcgResult:
    """Lowest ``X.shape[1]`` eigenpairs of the Hermitian ``A`` by LOBPCG.

    Only the first ``n_required`` columns must converge; the remaining
    columns act as guard vectors that speed up convergence of the wanted ones.
    With ``tol_degeneracy`` set, required columns whose Ritz value lies
    within it of the lowest must reach ``tol`` while the others only need
    ``tol_cert`` (their eigenvalue error is quadratic in the residual).
    The search space ``[X, W, P]`` is kept orthonormal, so every
    Rayleigh-Ritz step is a standard Hermitian eigenproblem.
    """
    n, k = X.shape
    if A.shape != (n, n):
        raise StructuralError(f"operator {A.shape} and block {X.shape} do not match")
    n_required = k if n_required is None else min(n_required, k)
    tol_cert = tol if tol_cert is None else max(tol_cert, tol)

    def targets(vals):
        t = np.full(k, tol)
        if tol_degeneracy is not None:
            m = _cluster_size(vals[:n_required], tol_degeneracy)
            t[m:n_required] = tol_cert
        return t
    X = _orthonormalize(np.asarray(X, dtype=np.result_type(A.dtype, X.dtype, float)))
    if X.shape[1] < k:
        fill = random_block(n, k - X.shape[1], seed=DEFAULT_SEED + 7)
        X = _orthonormalize(np.hstack([X, _project_out(fill, X)]))
    AX = A @ X
    theta, C = np.linalg.eigh(X.conj().T @ AX)
    X, AX = X @ C, AX @ C
    P = None
    it = 0
    rn = np.full(k, np.inf)
    converged = False
    while True:
        R = AX - X * theta
        rn = np.linalg.norm(R, axis=0)
        tt = targets(theta)
        if np.all(rn[:n_required] <= tt[:n_required]):
            # confirm with a fresh product; the running AX accumulates rounding
            AX = A @ X
            R = AX - X * theta
            rn = np.linalg.norm(R, axis=0)
            if np.all(rn[:n_required] <= tt[:n_required]):
                converged = True
                break
        if it >= maxiter:
            break
        it += 1
        active = rn > tt
        W = R[:, active]
        if precond is not None:
            W = precond(W, theta[active])
        Z = W if P is None else np.hstack([W, P])
        Z = _orthonormalize(_project_out(Z, X))
        Z = _orthonormalize(_project_out(Z, X))
        if Z.shape[1] == 0:
            AX = A @ X
            continue
        AZ = A @ Z
        S = np.hstack([X, Z])
        AS = np.hstack([AX, AZ])
        G = S.conj().T @ AS
        G = 0.5 * (G + G.conj().T)
        vals, V = np.linalg.eigh(G)
        C = V[:, :k]
        theta = vals[:k]
        X = S @ C
        AX = AS @ C
        Cz = C[k:, :][:, active]
        P = Z @ Cz if Cz.size else None
        if it % 20 == 0:
            # periodic re-orthonormalization keeps X numerically orthonormal
            X = _orthonormalize(X)
            AX = A @ X
            theta, C = np.linalg.eigh(0.5 * (X.conj().T @ AX + (X.conj().T @ AX).conj().T))
            X, AX = X @ C, AX @ C
    return LobpcgResult(theta, X, rn, it, converged)


def _cluster_size(values, tol_degeneracy) -> int:
    return int(np.sum(values - values[0] <= tol_degeneracy))


def dense_fallback(H, dense_cap=DENSE_CAP, n_lowest=None):
    """All (or the ``n_lowest``) eigenpairs of ``H`` by dense diagonalization."""
    n = H.shape[0]
    if n > dense_cap:
        raise SolverError(
            f"dense diagonalization refused: dimension {n} exceeds the dense cap {dense_cap}"
        )
    dense = H.toarray() if sp.issparse(H) else np.asarray(H)
    if n_lowest is None or n_lowest >= n:
        return np.linalg.eigh(dense)
    return sla.eigh(dense, subset_by_index=[0, n_lowest - 1], driver="evr")


def dense_ground_manifold(H, tol_degeneracy=TOL_DEGENERACY, dense_cap=DENSE_CAP, mu=None):
    n = H.shape[0]
    want = min(n, 16)
    while True:
        w, V = dense_fallback(H, dense_cap, n_lowest=want)
        m = _cluster_size(w, tol_degeneracy)
        if m < len(w) or want >= n:
            break
        want = min(n, 2 * want)
    gap = float(w[m] - w[0]) if m < len(w) else np.inf
    states = V[:, :m]
    res = np.linalg.norm(H @ states - states * w[0], axis=0)
    return GroundStateManifold(
        energy=float(w[0]), states=states, gap=gap, mu=mu, iterations=0,
        converged=True, method="dense", residuals=res,
    )


def solve_ground_manifold(
    H,
    guess=None,
    tol_resid=TOL_RESID,
    tol_degeneracy=TOL_DEGENERACY,
    max_iter=MAX_ITER,
    dense_cap=DENSE_CAP,
    seed=DEFAULT_SEED,
    mu=None,
    precond="jacobi",
    tol_cert=TOL_CERT,
) -> GroundStateManifold:
    """Ground energy and the full degenerate ground manifold of ``H``.

    Starts with ``k = max(2, guess width)`` targeted eigenpairs plus guard
    vectors and grows ``k`` by 4 while the ``k`` lowest Ritz values all lie
    within ``tol_degeneracy`` of the lowest one.  When LOBPCG stalls for
    ``STALL_CHUNK`` iterations the guard block grows as well, which is what
    resolves tight (but non-degenerate) low-lying clusters.  Iterations of all
    restarts are summed in ``iterations``.  Eigenpairs above the cluster
    are only converged to ``tol_cert``.
    """
    n = H.shape[0]
    if guess is not None:
        guess = np.asarray(guess)
        if guess.ndim == 1:
            guess = guess[:, None]
        if guess.shape[0] != n:
            raise StructuralError(f"guess has {guess.shape[0]} rows, operator dimension is {n}")
    width = 0 if guess is None else guess.shape[1]
    k = max(2, width)
    guard = N_GUARD
    if 3 * (k + guard) >= n:
        return dense_ground_manifold(H, tol_degeneracy, dense_cap, mu)

    pre = _jacobi(np.real(H.diagonal())) if precond == "jacobi" else None
    fill_seed = seed
    X0 = guess if guess is not None else np.zeros((n, 0))
    total_it = 0
    while True:
        block = min(k + guard, n // 3)
        if X0.shape[1] < block:
            fill = random_block(n, block - X0.shape[1], seed=fill_seed)
            fill_seed += 1
            X0 = np.hstack([X0, fill])
        budget = min(STALL_CHUNK, max_iter - total_it)
        res = lobpcg(H, X0[:, :block], precond=pre, tol=tol_resid, maxiter=budget, n_required=k,
                     tol_cert=tol_cert, tol_degeneracy=tol_degeneracy)
        total_it += res.iterations
        if not res.converged:
            if total_it < max_iter:
                guard = min(guard + GROWTH_STEP, MAX_GUARD)
                X0 = res.vectors
                continue
            log.warning(
                "LOBPCG did not converge after %d iterations (max residual %.2e)%s; dense fallback",
                total_it, res.residual_norms[:k].max(),
                "" if mu is None else f" at mu={tuple(float(x) for x in mu)}",
            )
            if n > dense_cap:
                raise SolverError("iterative solver failed and the matrix exceeds the dense cap", mu)
            out = dense_ground_manifold(H, tol_degeneracy, dense_cap, mu)
            out.iterations = total_it
            return out
        vals = res.values[:k]
        m = _cluster_size(vals, tol_degeneracy)
        if m < k:
            return GroundStateManifold(
                energy=float(res.values[0]), states=res.vectors[:, :m],
                gap=float(res.values[m] - res.values[0]), mu=mu,
                iterations=total_it, converged=True, method="iterative",
                residuals=res.residual_norms[:m],
            )
        if 3 * (k + GROWTH_STEP + guard) >= n:
            out = dense_ground_manifold(H, tol_degeneracy, dense_cap, mu)
            out.iterations = total_it
            return out
        k += GROWTH_STEP
        X0 = res.vectors
