"""OLS with many controls and three heteroskedasticity-robust variances.

* ``hc0``: Eicker-White sandwich with meat ``sum vhat_i vhat_i' uhat_i^2``.
* ``hck``: meat ``sum vhat_i vhat_i' sigma_i`` where ``sigma`` solves
  ``(M * M) sigma = uhat^2`` (elementwise square of the annihilator).
* ``hca``: meat ``sum vhat_i vhat_i' y_i uacute_i`` with the leave-one-out
  residual ``uacute_i = uhat_i / M_ii``. The meat may be negative.

Negative or unavailable variances follow the policies documented on
:func:`t_test`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
from scipy.stats import norm

from .errors import (
    CollinearRegressor,
    DimensionMismatch,
    HCKUnavailable,
    LeverageDegenerate,
    NegativeVariance,
)
from .projection import (
    LEVERAGE_FLOOR,
    Dataset,
    PartialledRegressors,
    ProjectionContext,
    build_projection,
    partial_out,
)

METHODS = ("hc0", "hck", "hca")
HCK_RCOND_MIN = 1e-12


@dataclass(frozen=True)
class FitResult:
    dataset: Dataset
    ctx: ProjectionContext
    partialled: PartialledRegressors
    beta: np.ndarray
    resid: np.ndarray
    variances: dict = field(default_factory=dict)
    hck_unavailable: bool = False
    hca_clamped: bool = False

    @property
    def vhat(self) -> np.ndarray:
        return self.partialled.vhat

    @property
    def gram(self) -> np.ndarray:
        return self.partialled.gram

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def leverage_degenerate(self) -> bool:
        return self.ctx.min_leverage < LEVERAGE_FLOOR

    @property
    def loo_resid(self) -> np.ndarray:
        """``uhat_i / M_ii``; raises if any ``M_ii`` is below the floor."""
        self.ctx.require_leverage()
        return self.resid / self.ctx.leverage


@dataclass(frozen=True)
class TestResult:
    t: float
    p_normal: float
    method: str
    variance: float
    clamped: bool = False
    fallback: bool = False


def fit_ols(dataset: Dataset, ctx: ProjectionContext | None = None) -> FitResult:
    """Coefficients on ``x`` and residuals from the regression of ``y`` on ``(x, W)``."""
    if ctx is None:
        ctx = build_projection(dataset.W)
    elif ctx.n != dataset.n:
        raise DimensionMismatch("projection context and dataset disagree on n")
    if ctx.rank + dataset.d_x >= dataset.n:
        raise CollinearRegressor(
            f"need rank(W) + d_x < n, got {ctx.rank} + {dataset.d_x} >= {dataset.n}"
        )
    part = partial_out(ctx, dataset.x)
    beta = np.linalg.solve(part.gram, part.vhat.T @ dataset.y)
    # M(y - x beta) = My - vhat beta
    resid = ctx.apply(dataset.y) - part.vhat @ beta
    return FitResult(dataset, ctx, part, beta, resid)


def _sandwich(fit: FitResult, w: np.ndarray) -> np.ndarray:
    vhat = fit.vhat
    meat = (vhat * w[:, None]).T @ vhat
    return _bread(fit, meat)


def _bread(fit: FitResult, meat: np.ndarray) -> np.ndarray:
    G_inv = np.linalg.inv(fit.gram)
    out = G_inv @ meat @ G_inv
    return 0.5 * (out + out.T)


def meat_weights(fit: FitResult, method: str) -> np.ndarray:
    """Per-observation scalars ``w_i`` such that the meat is ``sum vhat_i vhat_i' w_i``."""
    method = method.lower()
    if method == "hc0":
        return fit.resid**2
    if method == "hca":
        return fit.dataset.y * fit.loo_resid
    if method == "hck":
        return hck_sigma(fit.ctx, fit.resid)
    raise ValueError(f"unknown variance method {method!r}")


def hck_sigma(ctx: ProjectionContext, resid: np.ndarray) -> np.ndarray:
    """Solve ``(M * M) sigma = resid^2``."""
    M = ctx.matrix(force=True)
    K = M * M
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(K, check_finite=False)
    anorm = np.abs(K).sum(axis=0).max()
    rcond, info = sla.lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or not np.isfinite(rcond) or rcond < HCK_RCOND_MIN:
        raise HCKUnavailable(f"squared-annihilator system is singular (rcond={rcond:.3g})")
    return sla.lu_solve((lu, piv), resid**2, check_finite=False)


def variance_hc0(fit: FitResult) -> np.ndarray:
    return _sandwich(fit, fit.resid**2)


def variance_hck(fit: FitResult, ctx: ProjectionContext | None = None) -> np.ndarray:
    """Raises :class:`HCKUnavailable` when the squared-annihilator system is singular."""
    ctx = fit.ctx if ctx is None else ctx
    return _sandwich(fit, hck_sigma(ctx, fit.resid))


def variance_hca(fit: FitResult, ctx: ProjectionContext | None = None, clamp: bool = False) -> np.ndarray:
    """Leave-one-out variance. With ``clamp`` the meat is floored at ``1/n``.

    For ``d_x > 1`` the floor applies to the eigenvalues of the meat.
    """
    if ctx is not None and ctx is not fit.ctx:
        fit = replace(fit, ctx=ctx)
    meat = hca_meat(fit)
    if clamp:
        meat = floor_psd(meat, 1.0 / fit.n)[0]
    return _bread(fit, meat)


def hca_meat(fit: FitResult) -> np.ndarray:
    vhat = fit.vhat
    meat = (vhat * meat_weights(fit, "hca")[:, None]).T @ vhat
    return 0.5 * (meat + meat.T)


def floor_psd(A: np.ndarray, floor: float) -> tuple[np.ndarray, bool]:
    """Symmetric ``A`` with eigenvalues raised to at least ``floor``."""
    if A.shape == (1, 1):
        if A[0, 0] < floor:
            return np.array([[floor]]), True
        return A, False
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    if vals.min() >= floor:
        return A, False
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T, True


def robust_fit(dataset: Dataset, ctx: ProjectionContext | None = None) -> FitResult:
    """``fit_ols`` plus all three variance matrices.

    ``variances["hck"]`` falls back to HC0 (with ``hck_unavailable`` set) when
    the squared-annihilator system is singular. ``variances["hca"]`` is the raw,
    possibly indefinite, estimate; ``variances["hca_clamped"]`` is floored.
    """
    fit = fit_ols(dataset, ctx)
    out = {"hc0": variance_hc0(fit)}
    hck_unavailable = False
    try:
        out["hck"] = variance_hck(fit)
    except HCKUnavailable:
        out["hck"] = out["hc0"]
        hck_unavailable = True
    hca_clamped = False
    if not fit.leverage_degenerate:
        meat = hca_meat(fit)
        floored, hca_clamped = floor_psd(meat, 1.0 / fit.n)
        out["hca"] = _bread(fit, meat)
        out["hca_clamped"] = _bread(fit, floored)
    return replace(fit, variances=out, hck_unavailable=hck_unavailable, hca_clamped=hca_clamped)


def scalar_meat(fit: FitResult, method: str) -> tuple[float, bool]:
    """Scalar meat for ``d_x = 1``; returns ``(meat, fallback)``.

    HCK falls back to HC0 when unavailable. No clamping happens here.
    """
    v2 = fit.vhat[:, 0] ** 2
    fallback = False
    method = method.lower()
    if method == "hck":
        try:
            w = hck_sigma(fit.ctx, fit.resid)
        except HCKUnavailable:
            w = fit.resid**2
            fallback = True
    else:
        w = meat_weights(fit, method)
    return float(v2 @ w), fallback


NEGATIVE_MEAT_POLICIES = ("clamp", "absolute", "raise")


def guard_meat(meat, floor: float, policy: str = "clamp"):
    """Apply the negative-meat policy to a scalar or array of meats.

    ``clamp`` replaces the meat by ``max(meat, floor)``; ``absolute`` uses
    ``|meat|`` (the magnitude a complex square root would give); ``raise``
    leaves it untouched. Returns ``(meat, changed)``.
    """
    meat = np.asarray(meat, dtype=np.float64)
    if policy == "clamp":
        changed = meat < floor
        return np.where(changed, floor, meat), changed
    if policy == "absolute":
        changed = meat < 0
        return np.abs(meat), changed
    if policy == "raise":
        return meat, np.zeros(meat.shape, dtype=bool)
    raise ValueError(f"negative-meat policy must be one of {NEGATIVE_MEAT_POLICIES}")


def t_test(fit: FitResult, method: str, beta0: float = 0.0, policy: str = "clamp") -> TestResult:
    """Two-sided normal-critical-value t-test of ``beta = beta0`` (``d_x = 1``).

    An unavailable HCK falls back to HC0 (``fallback=True``). The HCA and HCK
    meats can be negative; ``policy`` decides what happens (see
    :func:`guard_meat`, default ``max(meat, 1/n)``) and ``clamped`` records
    whether it changed the meat. A non-positive variance that survives the
    policy raises :class:`NegativeVariance`.
    """
    if fit.dataset.d_x != 1:
        raise DimensionMismatch("t_test needs a scalar regressor of interest")
    method = method.lower()
    if method not in METHODS:
        raise ValueError(f"unknown variance method {method!r}")
    meat, fallback = scalar_meat(fit, method)
    clamped = False
    if method != "hc0" and not fallback:
        guarded, changed = guard_meat(meat, 1.0 / fit.n, policy)
        meat, clamped = float(guarded), bool(changed)
    if meat <= 0.0:
        raise NegativeVariance(f"{method} meat is {meat:.3g}")
    s = float(fit.gram[0, 0])
    var = meat / (s * s)
    t = (float(fit.beta[0]) - beta0) / np.sqrt(var)
    return TestResult(t=t, p_normal=float(2.0 * norm.sf(abs(t))), method=method,
                      variance=var, clamped=clamped, fallback=fallback)


def linear_test(fit: FitResult, method: str, c, lam: float, policy: str = "clamp") -> TestResult:
    """Normal-critical-value test of ``c'beta = lam`` for any ``d_x``.

    For ``d_x = 1`` and ``c = 1`` this is :func:`t_test`. With ``d_x > 1`` the
    HCA meat (and an available HCK meat) is made positive definite by raising
    its eigenvalues to ``1/n`` under the ``clamp`` policy; under ``absolute``
    the eigenvalues are replaced by their magnitudes.
    """
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    if c.shape != (fit.dataset.d_x,):
        raise DimensionMismatch(f"constraint has length {c.size}, expected {fit.dataset.d_x}")
    method = method.lower()
    if method not in METHODS:
        raise ValueError(f"unknown variance method {method!r}")
    vhat = fit.vhat
    fallback = False
    if method == "hck":
        try:
            w = hck_sigma(fit.ctx, fit.resid)
        except HCKUnavailable:
            w, fallback = fit.resid**2, True
    else:
        w = meat_weights(fit, method)
    meat = (vhat * w[:, None]).T @ vhat
    meat = 0.5 * (meat + meat.T)
    clamped = False
    if method != "hc0" and not fallback:
        vals, vecs = np.linalg.eigh(meat)
        guarded, changed = guard_meat(vals, 1.0 / fit.n, policy)
        if changed.any():
            clamped = True
            meat = (vecs * guarded) @ vecs.T
    V = _bread(fit, meat)
    var = float(c @ V @ c)
    if var <= 0.0:
        raise NegativeVariance(f"{method} variance of c'beta is {var:.3g}")
    t = (float(c @ fit.beta) - lam) / np.sqrt(var)
    return TestResult(t=t, p_normal=float(2.0 * norm.sf(abs(t))), method=method,
                      variance=var, clamped=clamped, fallback=fallback)


def normal_tests(dataset: Dataset, beta0: float, methods=METHODS, ctx=None,
                 policy: str = "clamp") -> dict[str, TestResult]:
    fit = fit_ols(dataset, ctx)
    return {m: t_test(fit, m, beta0, policy) for m in methods}


__all__ = [
    "FitResult",
    "TestResult",
    "fit_ols",
    "variance_hc0",
    "variance_hck",
    "variance_hca",
    "robust_fit",
    "t_test",
    "linear_test",
    "normal_tests",
    "floor_psd",
    "guard_meat",
    "NEGATIVE_MEAT_POLICIES",
    "hck_sigma",
    "LeverageDegenerate",
]
