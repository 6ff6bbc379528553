"""The reduced basis model: basis, Gram matrix and all projected blocks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ConditioningError, StateError, StructuralError

__all__ = ["ReducedBasisModel"]

# relative size below which a new residual-basis direction is treated as dependent
_RES_DROP = 1e-13


class _Growing:
    """Column-growable dense array with amortized appends."""

    def __init__(self, rows, dtype=float, cap=8):
        self.data = np.zeros((rows, cap), dtype=dtype)
        self.n = 0

    def append(self, col):
        if self.n == self.data.shape[1]:
            new = np.zeros((self.data.shape[0], 2 * self.data.shape[1]), dtype=self.data.dtype)
            new[:, : self.n] = self.data[:, : self.n]
            self.data = new
        self.data[:, self.n] = col
        self.n += 1

    @property
    def view(self):
        return self.data[:, : self.n]


@dataclass
class ReducedBasisModel:
    """Surrogate ``{B, b, h_q, h_qq'}`` plus reduced observables.

    Attributes
    ----------
    basis : (dim, N) array or None
        Basis ``B``; ``None`` for an ``dim``-free (scan-only) model.
    gram : (N, N) array
        ``b = B^T B``.
    h : (Q, N, N) array
        ``h_q = B^T H_q B``.
    hh : (Q, Q, N, N) array
        ``h_qq' = B^T H_q H_q' B``.
    res_factor : (r, N*(Q+1)) array
        Upper-triangular factor of ``[b_j, H_1 b_j, ..., H_Q b_j]_j`` against an
        orthonormal residual basis; gives residual norms without cancellation.
    res_rows : (N,) int array
        Number of ``res_factor`` rows in use once basis column ``j`` was added.
    observables : dict
        ``name -> (n, n, N, N)`` reduced blocks ``o_{r,r'} = B^T O_{r,r'} B``.
    samples : list of (mu, m, n_added)
    history : list of dict
        One record per greedy iteration.
    """

    n_terms: int
    dim: int
    basis: np.ndarray | None
    gram: np.ndarray
    h: np.ndarray
    hh: np.ndarray
    res_factor: np.ndarray
    res_rows: np.ndarray
    observables: dict = field(default_factory=dict)
    samples: list = field(default_factory=list)
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    _hb: list | None = field(default=None, repr=False)
    _res_basis: _Growing | None = field(default=None, repr=False)
    _whitened: tuple | None = field(default=None, repr=False)

    @classmethod
    def empty(cls, n_terms: int, dim: int, meta=None) -> "ReducedBasisModel":
        Q = n_terms
        return cls(
            n_terms=Q,
            dim=dim,
            basis=np.zeros((dim, 0)),
            gram=np.zeros((0, 0)),
            h=np.zeros((Q, 0, 0)),
            hh=np.zeros((Q, Q, 0, 0)),
            res_factor=np.zeros((0, 0)),
            res_rows=np.zeros(0, dtype=int),
            meta=dict(meta or {}),
            _hb=[np.zeros((dim, 0)) for _ in range(Q)],
            _res_basis=_Growing(dim),
        )

    @property
    def N(self) -> int:
        return self.gram.shape[0]

    @property
    def has_basis(self) -> bool:
        return self.basis is not None

    @property
    def can_extend(self) -> bool:
        return self.basis is not None and self._hb is not None and self._res_basis is not None

    def _invalidate(self):
        self._whitened = None

    # ------------------------------------------------------------------ online
    def whitened(self):
        """Cholesky factor ``L`` of ``b`` and ``L^-1 h_q L^-T`` for every ``q``."""
        if self._whitened is None:
            if self.N == 0:
                raise StateError("reduced basis model is empty")
            try:
                L = np.linalg.cholesky(0.5 * (self.gram + self.gram.T))
            except np.linalg.LinAlgError as exc:
                raise ConditioningError("Gram matrix b is not numerically positive definite") from exc
            ht = np.empty_like(self.h)
            for q in range(self.n_terms):
                tmp = sla.solve_triangular(L, self.h[q], lower=True)
                ht[q] = sla.solve_triangular(L, tmp.T, lower=True).T
                ht[q] = 0.5 * (ht[q] + ht[q].T)
            self._whitened = (L, ht)
        return self._whitened

    def residual_norm(self, theta, lam, phi) -> float:
        """``sqrt(sum_i ||H(mu) B phi_i - lam B phi_i||^2)`` from ``res_factor``."""
        theta = np.asarray(theta, dtype=float)
        phi = np.asarray(phi)
        if phi.ndim == 1:
            phi = phi[:, None]
        if phi.shape[0] != self.N:
            raise StructuralError(f"phi has {phi.shape[0]} rows, model has N={self.N}")
        Q1 = self.n_terms + 1
        w = np.concatenate([[-lam], theta])
        r3 = self.res_factor.reshape(self.res_factor.shape[0], self.N, Q1)
        M = r3 @ w
        return float(np.linalg.norm(M @ phi))

    def residual_norm_gram(self, theta, lam, phi, clamp=1e-10):
        """Residual from the cross-Gram blocks ``h_qq'`` and ``b`` (squared-norm form).

        Tiny negative round-off (above ``-clamp * scale``) is clamped to zero.
        """
        theta = np.asarray(theta, dtype=float)
        phi = np.asarray(phi)
        if phi.ndim == 1:
            phi = phi[:, None]
        quad = np.einsum("ia,qpij,ja->qp", phi.conj(), self.hh, phi).real
        first = float(theta @ quad @ theta)
        second = lam ** 2 * float(np.einsum("ia,ij,ja->", phi.conj(), self.gram, phi).real)
        value = first - second
        scale = abs(first) + abs(second)
        if value < 0:
            if value < -clamp * max(scale, 1.0):
                raise ConditioningError(
                    f"squared residual {value:.3e} is negative beyond round-off (scale {scale:.3e})"
                )
            value = 0.0
        return float(np.sqrt(value))

    # ----------------------------------------------------------------- offline
    def _append_residual_columns(self, new_cols, operators):
        """Extend the orthonormal residual basis and ``res_factor`` with ``new_cols``."""
        Y = self._res_basis
        Q1 = self.n_terms + 1
        old_rows, old_cols = self.res_factor.shape
        coeff_cols = []
        rows_after = []
        for j in range(new_cols.shape[1]):
            u = new_cols[:, j]
            vecs = [u] + [H @ u for H in operators]
            for v in vecs:
                Yv = Y.view
                c = Yv.T @ v
                w = v - Yv @ c
                c2 = Yv.T @ w
                w = w - Yv @ c2
                c = c + c2
                nw = np.linalg.norm(w)
                if nw > _RES_DROP * max(np.linalg.norm(v), 1e-300):
                    Y.append(w / nw)
                    c = np.concatenate([c, [nw]])
                coeff_cols.append(c)
            rows_after.append(Y.n)
        n_rows = Y.n
        R = np.zeros((n_rows, old_cols + len(coeff_cols)))
        R[:old_rows, :old_cols] = self.res_factor
        for i, c in enumerate(coeff_cols):
            R[: c.size, old_cols + i] = c
        assert R.shape[1] == Q1 * (self.N + new_cols.shape[1])
        self.res_factor = R
        self.res_rows = np.concatenate([self.res_rows, rows_after]).astype(int)

    def extend(self, U, operators, observables=()):
        """Append the columns of ``U`` and border-update every reduced block.

        Only the new rows/columns of ``b``, ``h_q``, ``h_qq'`` (and of the
        observables already present) are computed; existing entries are kept.
        """
        if not self.can_extend:
            raise StateError("model was stored without basis data and cannot be extended")
        U = np.asarray(U, dtype=float)
        if U.ndim != 2 or U.shape[0] != self.dim:
            raise StructuralError(f"new basis block has shape {U.shape}, dim is {self.dim}")
        if U.shape[1] == 0:
            return self
        if len(operators) != self.n_terms:
            raise StructuralError(f"expected {self.n_terms} operators, got {len(operators)}")
        B = self.basis
        N, k, Q = self.N, U.shape[1], self.n_terms
        M = N + k

        HU = [Hq @ U for Hq in operators]

        gram = np.zeros((M, M))
        gram[:N, :N] = self.gram
        gram[:N, N:] = B.T @ U
        gram[N:, :N] = gram[:N, N:].T
        gram[N:, N:] = U.T @ U

        h = np.zeros((Q, M, M))
        h[:, :N, :N] = self.h
        for q in range(Q):
            h[q, :N, N:] = B.T @ HU[q]
            h[q, N:, :N] = h[q, :N, N:].T
            blk = U.T @ HU[q]
            h[q, N:, N:] = 0.5 * (blk + blk.T)

        hh = np.zeros((Q, Q, M, M))
        hh[:, :, :N, :N] = self.hh
        for q in range(Q):
            for p in range(Q):
                hh[q, p, :N, N:] = self._hb[q].T @ HU[p]
                hh[p, q, N:, :N] = hh[q, p, :N, N:].T
        for q in range(Q):
            for p in range(q, Q):
                blk = HU[q].T @ HU[p]
                hh[q, p, N:, N:] = blk
                hh[p, q, N:, N:] = blk.T

        for obs in observables:
            old = self.observables.get(obs.name)
            if old is None:
                continue
            n = obs.n_groups
            blocks = np.zeros((n, n, M, M), dtype=np.result_type(old, float))
            blocks[..., :N, :N] = old
            blocks[..., :N, N:] = obs.reduce(B, U)
            blocks[..., N:, :N] = np.conj(np.swapaxes(blocks[..., :N, N:], 0, 1)).swapaxes(-1, -2)
            blocks[..., N:, N:] = obs.reduce(U)
            self.observables[obs.name] = blocks

        self._append_residual_columns(U, operators)
        self.basis = np.hstack([B, U])
        self._hb = [np.hstack([self._hb[q], HU[q]]) for q in range(Q)]
        self.gram, self.h, self.hh = gram, h, hh
        self._invalidate()
        return self

    def precompute_observable(self, obs):
        """``o_{r,r'} = B^T O_{r,r'} B`` for every pair, stored under ``obs.name``."""
        if self.basis is None:
            raise StateError("observable blocks need the basis; model was stored without it")
        self.observables[obs.name] = obs.reduce(self.basis)
        return self.observables[obs.name]

    # ----------------------------------------------------------------- slicing
    def truncate(self, N: int) -> "ReducedBasisModel":
        """Model restricted to the first ``N`` basis vectors (the basis is hierarchical)."""
        if not 1 <= N <= self.N:
            raise StructuralError(f"cannot truncate a basis of size {self.N} to {N}")
        Q1 = self.n_terms + 1
        rows = int(self.res_rows[N - 1])
        samples, count = [], 0
        for mu, m, added in self.samples:
            if count >= N:
                break
            samples.append((mu, m, min(added, N - count)))
            count += added
        return ReducedBasisModel(
            n_terms=self.n_terms,
            dim=self.dim,
            basis=None if self.basis is None else self.basis[:, :N].copy(),
            gram=self.gram[:N, :N].copy(),
            h=self.h[:, :N, :N].copy(),
            hh=self.hh[:, :, :N, :N].copy(),
            res_factor=self.res_factor[:rows, : N * Q1].copy(),
            res_rows=self.res_rows[:N].copy(),
            observables={k: v[..., :N, :N].copy() for k, v in self.observables.items()},
            samples=samples,
            history=[r for r in self.history if r.get("N", 0) <= N],
            meta=dict(self.meta),
        )

    def without_basis(self) -> "ReducedBasisModel":
        out = self.truncate(self.N)
        out.basis = None
        return out
