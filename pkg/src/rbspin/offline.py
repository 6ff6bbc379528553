"""Offline stage: greedy snapshot selection and reduced basis assembly."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .affine import AffineOperator, ParameterGrid, as_point
from .basis import ReducedBasisModel
from .errors import ConfigError, SolverError, StateError, TrainingAborted
from .online import reduced_ground, warm_start_guess
from .truth import DEFAULT_SEED, DENSE_CAP, MAX_ITER, TOL_DEGENERACY, TOL_RESID, solve_ground_manifold

__all__ = [
    "compress",
    "extend_reduced_matrices",
    "residual",
    "GreedyConfig",
    "greedy_train",
    "training_residuals",
]

log = logging.getLogger(__name__)


def _project_complement(V, B, gram):
    """``V - B b^-1 B^T V``, the part of ``V`` orthogonal to ``span(B)``."""
    if B is None or B.shape[1] == 0:
        return V
    return V - B @ np.linalg.solve(gram, B.T @ V)


def compress(new, B=None, gram=None, compress_tol=1e-10):
    """Orthonormal directions of ``new`` missing from ``span(B)``.

    The block is projected onto the orthogonal complement of ``span(B)``
    (twice, for numerical orthogonality), and the left singular vectors
    with singular value above ``compress_tol`` are kept.  These are
    projected once more and re-orthonormalized so that ``B^T U`` sits at
    round-off level even for singular values close to the threshold.

    Returns
    -------
    U : (dim, m') array
        ``m' <= new.shape[1]``; empty when ``new`` already lies in ``span(B)``.
    sigma : 1-d array
        All singular values of the projected block.
    """
    new = np.asarray(new, dtype=float)
    if new.ndim == 1:
        new = new[:, None]
    if B is not None and B.shape[1] > 0 and gram is None:
        gram = B.T @ B
    R = _project_complement(_project_complement(new, B, gram), B, gram)
    if R.shape[1] == 0:
        return R, np.zeros(0)
    Usv, sigma, _ = np.linalg.svd(R, full_matrices=False)
    keep = sigma > compress_tol
    U = Usv[:, keep]
    if U.shape[1] == 0:
        return U, sigma
    for _ in range(2):
        U = _project_complement(U, B, gram)
        U, _ = np.linalg.qr(U)
    return U, sigma


def extend_reduced_matrices(rbm: ReducedBasisModel, U, model: AffineOperator, obs=()):
    """Border-update ``rbm`` with the new basis block ``U`` (in place; returns ``rbm``)."""
    return rbm.extend(U, model.terms, obs)


def residual(rbm: ReducedBasisModel, mu, phi, lam, operator: AffineOperator | None = None,
             theta=None, method="stable") -> float:
    """Residual ``sqrt(sum_i ||H(mu) B phi_i - lam B phi_i||^2)`` without touching ``B``.

    ``method="gram"`` evaluates the expanded quadratic form in ``h_qq'`` and
    ``b`` directly; ``"stable"`` (default) uses the triangular factor of the
    residual space, which is the same quantity free of cancellation.
    """
    if theta is None:
        if operator is None:
            raise StateError("need either an operator or explicit theta coefficients")
        theta = operator.coefficients(mu)
    if method == "stable":
        return rbm.residual_norm(theta, lam, phi)
    if method == "gram":
        return rbm.residual_norm_gram(theta, lam, phi)
    raise ValueError(f"unknown residual method {method!r}")


@dataclass
class GreedyConfig:
    """Settings of the greedy loop.

    ``n_f`` caps the number of truth solves; ``max_basis`` (optional) stops
    the loop once the basis reaches that size.  ``mu_1`` defaults to the
    first training point.
    """

    train_grid: ParameterGrid
    tol: float = 1e-6
    n_f: int = 100
    mu_1: np.ndarray | None = None
    compress_tol: float = 1e-10
    max_basis: int | None = None
    tol_resid: float = TOL_RESID
    tol_degeneracy: float = TOL_DEGENERACY
    seed: int = DEFAULT_SEED
    threads: int = 1
    residual_method: str = "stable"
    dense_cap: int = DENSE_CAP
    max_iter: int = MAX_ITER
    extra: dict = field(default_factory=dict)

    def validate(self, operator: AffineOperator | None = None) -> int:
        """Check the settings; returns the grid index of ``mu_1``."""
        if len(self.train_grid) == 0:
            raise ConfigError("training grid is empty")
        if not self.tol > 0:
            raise ConfigError(f"greedy tol must be positive, got {self.tol}")
        if self.n_f < 1:
            raise ConfigError(f"n_f must be >= 1, got {self.n_f}")
        if self.compress_tol < 0:
            raise ConfigError("compress_tol must be non-negative")
        if self.max_basis is not None and self.max_basis < 1:
            raise ConfigError("max_basis must be >= 1")
        if self.residual_method not in ("stable", "gram"):
            raise ConfigError(f"unknown residual method {self.residual_method!r}")
        if operator is not None:
            if self.train_grid.ndim != operator.n_params:
                raise ConfigError(
                    f"training grid has {self.train_grid.ndim} axes, model has {operator.n_params} parameters"
                )
            try:
                self.train_grid.check_inside(operator.domain)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if self.mu_1 is None:
            return 0
        idx = self.train_grid.index_of(as_point(self.mu_1, self.train_grid.ndim))
        if idx < 0:
            raise ConfigError(f"mu_1={tuple(np.ravel(self.mu_1))} is not a training-grid point")
        return idx


def training_residuals(rbm: ReducedBasisModel, thetas, tol_degeneracy=TOL_DEGENERACY,
                       method="stable", threads=1):
    """Residual and reduced energy at every row of ``thetas`` (shape ``(M, Q)``)."""
    rbm.whitened()
    M = len(thetas)

    def one(i):
        sol = reduced_ground(rbm, np.zeros(0), theta=thetas[i], tol_degeneracy=tol_degeneracy)
        if method == "gram":
            r = rbm.residual_norm_gram(sol.theta, sol.energy, sol.phi)
        else:
            r = rbm.residual_norm(sol.theta, sol.energy, sol.phi)
        return r, sol.energy, sol.m

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(M)))
    else:
        rows = [one(i) for i in range(M)]
    res = np.array([r[0] for r in rows])
    lam = np.array([r[1] for r in rows])
    mult = np.array([r[2] for r in rows], dtype=int)
    return res, lam, mult


def greedy_train(model: AffineOperator, obs=(), cfg: GreedyConfig | None = None,
                 log_callback=None) -> ReducedBasisModel:
    """Greedy reduced basis training.

    Each iteration truth-solves at the current sample (warm started from the
    surrogate), adds the compressed new directions to the basis, evaluates
    the residual at every training point and moves to the unvisited point of
    largest residual (lowest grid index on ties).  The loop stops when the
    maximum residual is at most ``cfg.tol``, after ``cfg.n_f`` truth solves,
    once ``cfg.max_basis`` is reached or when every point was visited.
    Reduced observable blocks are computed at the end.

    ``log_callback`` receives one dict per iteration.

    Raises
    ------
    TrainingAborted
        When a truth solve fails; ``exc.partial`` is the model built so far.
    """
    if cfg is None:
        raise ConfigError("a GreedyConfig is required")
    idx = cfg.validate(model)
    points = cfg.train_grid.points
    thetas = np.array([model.coefficients(p) for p in points])
    meta = {
        "n_terms": model.n_terms,
        "param_names": list(model.param_names),
        "term_names": list(model.term_names),
        "domain": model.domain.tolist(),
        "greedy_tol": cfg.tol,
        "compress_tol": cfg.compress_tol,
        "tol_resid": cfg.tol_resid,
        "tol_degeneracy": cfg.tol_degeneracy,
        "n_f": cfg.n_f,
        "seed": cfg.seed,
        "train_shape": list(cfg.train_grid.shape),
    }
    meta.update(cfg.extra)
    rbm = ReducedBasisModel.empty(model.n_terms, model.dim, meta)
    visited = np.zeros(len(points), dtype=bool)
    compress_scale = None
    n_solves = 0
    t_start = time.perf_counter()

    while True:
        t0 = time.perf_counter()
        mu = points[idx]
        visited[idx] = True
        guess = warm_start_guess(rbm, mu, model, cfg.tol_degeneracy, cfg.seed, extra=1)
        try:
            truth = solve_ground_manifold(
                model.combine(thetas[idx]), guess, tol_resid=cfg.tol_resid,
                tol_degeneracy=cfg.tol_degeneracy, seed=cfg.seed, mu=mu,
                max_iter=cfg.max_iter, dense_cap=cfg.dense_cap,
            )
        except SolverError as exc:
            rbm.meta["aborted"] = str(exc)
            raise TrainingAborted(f"truth solve failed during greedy training: {exc}", mu, rbm) from exc
        n_solves += 1

        U, sigma = compress(truth.states, rbm.basis, rbm.gram,
                            cfg.compress_tol * (compress_scale or 1.0))
        if compress_scale is None and sigma.size:
            compress_scale = float(sigma[0])
            rbm.meta["compress_scale"] = compress_scale
            if compress_scale != 1.0:
                U, sigma = compress(truth.states, rbm.basis, rbm.gram, cfg.compress_tol * compress_scale)
        if cfg.max_basis is not None and rbm.N + U.shape[1] > cfg.max_basis:
            U = U[:, : cfg.max_basis - rbm.N]
        if U.shape[1] == 0:
            log.info("sample %s adds no new direction", tuple(mu.tolist()))
        extend_reduced_matrices(rbm, U, model)
        rbm.samples.append((mu.copy(), truth.m, U.shape[1]))

        res, _, _ = training_residuals(rbm, thetas, cfg.tol_degeneracy, cfg.residual_method, cfg.threads)
        max_res = float(res.max())
        candidates = np.where(visited, -np.inf, res)
        nxt = int(np.argmax(candidates))
        record = {
            "iteration": n_solves,
            "mu": mu.tolist(),
            "m": truth.m,
            "added": U.shape[1],
            "N": rbm.N,
            "max_residual": max_res,
            "argmax_mu": points[int(np.argmax(res))].tolist(),
            "truth_iterations": truth.iterations,
            "truth_method": truth.method,
            "wall": time.perf_counter() - t0,
        }
        rbm.history.append(record)
        if log_callback is not None:
            log_callback(record)
        log.info("greedy %d: mu=%s m=%d N=%d max residual %.3e",
                 n_solves, tuple(mu.tolist()), truth.m, rbm.N, max_res)

        if max_res <= cfg.tol:
            rbm.meta["stop_reason"] = "tolerance"
            break
        if n_solves >= cfg.n_f:
            rbm.meta["stop_reason"] = "n_f"
            break
        if cfg.max_basis is not None and rbm.N >= cfg.max_basis:
            rbm.meta["stop_reason"] = "max_basis"
            break
        if visited.all():
            rbm.meta["stop_reason"] = "grid_exhausted"
            break
        idx = nxt

    rbm.meta["n_truth_solves"] = n_solves
    rbm.meta["wall_offline"] = time.perf_counter() - t_start
    for o in obs:
        rbm.precompute_observable(o)
    return rbm
