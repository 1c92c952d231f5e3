"""Control-space projections.

Everything derived from the control matrix ``W`` lives here: the annihilator
``M = I - W (W'W)^+ W'`` applied implicitly through an orthonormal basis of
``col(W)``, its diagonal (the leverage of each observation with respect to the
residual space), partialled-out regressors, and restricted least-squares fits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CollinearRegressor,
    DegenerateConstraint,
    DimensionMismatch,
    LeverageDegenerate,
    NonFiniteInput,
)

RANK_TOL = 1e-10
LEVERAGE_FLOOR = 1e-8
GRAM_COND_MAX = 1e12
DENSE_THRESHOLD = 512


def _as_matrix(a, n: int | None = None, name: str = "array") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None] if n is None or a.shape[0] == n else a[None, :]
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be 1-D or 2-D, got shape {a.shape}")
    return a


def _check_finite(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(np.atleast_2d(a)))
        raise NonFiniteInput(f"{name} has {len(bad)} non-finite entries (first at {tuple(bad[0])})")


@dataclass(frozen=True)
class Dataset:
    """Outcome ``y`` (n,), regressors of interest ``x`` (n, d_x), controls ``W`` (n, q)."""

    y: np.ndarray
    x: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim == 2 and y.shape[1] == 1:
            y = y[:, 0]
        if y.ndim != 1:
            raise DimensionMismatch(f"y must be a vector, got shape {y.shape}")
        n = y.shape[0]
        if n < 1:
            raise DimensionMismatch("need at least one observation")
        x = _as_matrix(self.x, n, "x")
        W = np.asarray(self.W, dtype=np.float64)
        if W.ndim == 1:
            W = W[:, None]
        if W.size == 0:
            W = np.zeros((n, 0))
        if x.shape[0] != n or W.shape[0] != n:
            raise DimensionMismatch(
                f"row counts differ: y has {n}, x has {x.shape[0]}, W has {W.shape[0]}"
            )
        if x.shape[1] < 1:
            raise DimensionMismatch("x needs at least one column")
        for name, a in (("y", y), ("x", x), ("W", W)):
            _check_finite(a, name)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "W", W)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def q(self) -> int:
        return self.W.shape[1]

    @property
    def d_x(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class ProjectionContext:
    """Factorized annihilator of a control matrix.

    ``basis`` is an orthonormal basis of ``col(W)`` with ``rank`` columns and
    ``leverage[i] = M_ii = 1 - ||basis[i]||^2``.
    """

    basis: np.ndarray
    leverage: np.ndarray
    rank: int
    n_controls: int
    dense_threshold: int = DENSE_THRESHOLD
    _dense: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.leverage.shape[0]

    @property
    def min_leverage(self) -> float:
        return float(self.leverage.min()) if self.n else 1.0

    @property
    def rank_deficient(self) -> bool:
        return self.rank < self.n_controls

    def apply(self, v: np.ndarray) -> np.ndarray:
        """``M v`` for a vector or for each column of a matrix."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != self.n:
            raise DimensionMismatch(f"expected {self.n} rows, got {v.shape[0]}")
        if self.rank == 0:
            return v.copy()
        Q = self.basis
        return v - Q @ (Q.T @ v)

    def matrix(self, force: bool = False) -> np.ndarray:
        """Dense ``M``. Refuses above ``dense_threshold`` unless ``force``."""
        if self._dense is not None:
            return self._dense
        if self.n > self.dense_threshold and not force:
            raise MemoryError(
                f"refusing to materialize a {self.n}x{self.n} annihilator "
                f"(threshold {self.dense_threshold}); pass force=True"
            )
        M = np.eye(self.n) - self.basis @ self.basis.T
        if self.n <= self.dense_threshold:
            object.__setattr__(self, "_dense", M)
        return M

    def degenerate_rows(self, floor: float = LEVERAGE_FLOOR) -> np.ndarray:
        return np.flatnonzero(self.leverage < floor)

    def require_leverage(self, floor: float = LEVERAGE_FLOOR) -> None:
        rows = self.degenerate_rows(floor)
        if rows.size:
            raise LeverageDegenerate(
                f"{rows.size} observation(s) have annihilator diagonal below {floor:g}: "
                f"rows {rows[:10].tolist()}{'...' if rows.size > 10 else ''}",
                rows,
            )


def build_projection(W, dense_threshold: int = DENSE_THRESHOLD) -> ProjectionContext:
    """Orthonormal basis, rank and leverage diagonal of ``col(W)``.

    The rank counts singular values above ``1e-10`` times the largest one.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim == 1:
        W = W[:, None]
    _check_finite(W, "W")
    n, q = W.shape
    if n < 1:
        raise DimensionMismatch("need at least one observation")
    if q == 0:
        return ProjectionContext(np.zeros((n, 0)), np.ones(n), 0, 0, dense_threshold)
    U, s, _ = np.linalg.svd(W, full_matrices=False)
    r = int(np.sum(s > RANK_TOL * s[0])) if s[0] > 0 else 0
    Q = np.ascontiguousarray(U[:, :r])
    m = 1.0 - np.einsum("ij,ij->i", Q, Q)
    np.clip(m, 0.0, 1.0, out=m)
    return ProjectionContext(Q, m, r, q, dense_threshold)


def dependent_columns(W) -> np.ndarray:
    """Indices of columns that pivoted QR finds linearly dependent on earlier pivots."""
    import scipy.linalg as sla

    W = np.asarray(W, dtype=np.float64)
    if W.ndim == 1:
        W = W[:, None]
    if W.shape[1] == 0:
        return np.zeros(0, dtype=int)
    _, R, piv = sla.qr(W, mode="economic", pivoting=True, check_finite=False)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return np.arange(W.shape[1])
    r = int(np.sum(d > RANK_TOL * d[0]))
    return np.sort(piv[r:])


def apply_annihilator(ctx: ProjectionContext, v) -> np.ndarray:
    return ctx.apply(v)


@dataclass(frozen=True)
class PartialledRegressors:
    """``vhat = M x`` (n, d_x) and its Gram matrix ``vhat' vhat``."""

    vhat: np.ndarray
    gram: np.ndarray

    @property
    def d_x(self) -> int:
        return self.vhat.shape[1]


def partial_out(ctx: ProjectionContext, x) -> PartialledRegressors:
    x = _as_matrix(x, ctx.n, "x")
    vhat = ctx.apply(x)
    xnorm = np.linalg.norm(x, axis=0)
    vnorm = np.linalg.norm(vhat, axis=0)
    flat = np.flatnonzero(vnorm <= LEVERAGE_FLOOR * np.maximum(xnorm, np.finfo(float).tiny))
    if flat.size:
        raise CollinearRegressor(f"regressor column(s) {flat.tolist()} lie in the span of the controls")
    gram = vhat.T @ vhat
    if np.linalg.cond(gram) > GRAM_COND_MAX:
        raise CollinearRegressor("partialled regressors are numerically collinear")
    return PartialledRegressors(vhat, gram)


def restricted_gamma(W, z) -> np.ndarray:
    """Minimum-norm least-squares coefficients of ``z`` on ``W``."""
    W = np.asarray(W, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    _check_finite(W, "W")
    _check_finite(z, "z")
    if W.ndim == 1:
        W = W[:, None]
    if W.shape[0] != z.shape[0]:
        raise DimensionMismatch(f"W has {W.shape[0]} rows, z has {z.shape[0]}")
    if W.shape[1] == 0:
        return np.zeros((0,) + z.shape[1:])
    gamma, *_ = np.linalg.lstsq(W, z, rcond=RANK_TOL)
    return gamma


def null_space(c: np.ndarray) -> np.ndarray:
    """Orthonormal basis (d, d-1) of ``{z : c'z = 0}``."""
    _, _, Vt = np.linalg.svd(c[None, :])
    return Vt[1:].T


def constrained_ols(dataset: Dataset, c, lam: float, ctx: ProjectionContext | None = None):
    """OLS of ``y`` on ``(x, W)`` subject to ``c'beta = lam``.

    Returns ``(beta, gamma)``. The constraint is eliminated by writing
    ``beta = beta_p + N zeta`` with ``c'beta_p = lam`` and ``N`` spanning the
    null space of ``c'``.
    """
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    if c.shape != (dataset.d_x,):
        raise DimensionMismatch(f"constraint vector has length {c.size}, expected {dataset.d_x}")
    if not np.all(np.isfinite(c)) or not np.isfinite(lam):
        raise NonFiniteInput("constraint must be finite")
    cc = float(c @ c)
    if cc == 0.0:
        raise DegenerateConstraint("constraint vector is zero")
    if ctx is None:
        ctx = build_projection(dataset.W)
    beta = c * (lam / cc)
    if dataset.d_x > 1:
        N = null_space(c)
        part = partial_out(ctx, dataset.x @ N)
        z = dataset.y - dataset.x @ beta
        zeta = np.linalg.solve(part.gram, part.vhat.T @ z)
        beta = beta + N @ zeta
    gamma = restricted_gamma(dataset.W, dataset.y - dataset.x @ beta)
    return beta, gamma
