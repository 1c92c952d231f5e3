"""Modified wild bootstrap for regressions with many controls.

The null-imposed residuals ``utilde = M(y - x beta0)`` are rescaled by

    a_n = sqrt(max(Sacute, 1/n) / Shat),
    Sacute = sum vhat_i^2 y_i utilde_i / M_ii,   Shat = sum vhat_i^2 utilde_i^2,

so the bootstrap world reproduces the leave-one-out variance target rather
than the (downward biased) Eicker-White one. Each replication regenerates
``y* = yhat0 + a_n w* utilde`` and recomputes the leave-one-out t-ratio.

All replications of one call are evaluated as a single ``n x B`` matrix
problem; the weights of replication ``b`` come from the counter stream
``key.derive("replication", b)`` so results do not depend on how the work
is chunked or scheduled.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateResiduals, DimensionMismatch, NonPSDAdjustment
from .estimators import NEGATIVE_MEAT_POLICIES, fit_ols, guard_meat, t_test
from .projection import (
    Dataset,
    ProjectionContext,
    build_projection,
    constrained_ols,
    partial_out,
)
from .rng import StreamKey, replication_weights

MODES = ("percentile-t", "percentile", "score")
DEFAULT_B = 199
# fixed so chunked evaluation is bit-identical for every worker count
CHUNK = 256
_ZERO_REL = 64 * np.finfo(float).eps


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = DEFAULT_B
    mode: str = "percentile-t"
    weights: str = "gaussian"
    seed: int | StreamKey = 0
    floor: float | None = None
    workers: int = 1
    negative_meat: str = "clamp"

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.floor is not None and not self.floor > 0:
            raise ValueError("floor must be positive")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.negative_meat not in NEGATIVE_MEAT_POLICIES:
            raise ValueError(f"negative_meat must be one of {NEGATIVE_MEAT_POLICIES}")

    @property
    def key(self) -> StreamKey:
        if isinstance(self.seed, StreamKey):
            return self.seed
        return StreamKey.root(self.seed)

    def floor_for(self, n: int) -> float:
        return 1.0 / n if self.floor is None else self.floor


@dataclass(frozen=True)
class AdjustmentFactor:
    sigma_acute: float | np.ndarray
    sigma_hat: float | np.ndarray
    a_n: float | np.ndarray
    clamped: bool


@dataclass(frozen=True)
class BootstrapOutcome:
    """Result of one bootstrap test.

    ``rank`` is ``mean(|T_n| > |T*_b|)``, the bootstrap cdf of ``|T_n|``;
    ``p_value = 1 - rank`` is the share of draws at least as extreme as the
    observed statistic (ties favour the null).
    """

    p_value: float
    rank: float
    statistic: float
    t_star: np.ndarray
    adjustment: AdjustmentFactor
    mode: str
    observed_clamped: bool = False
    bootstrap_clamps: int = 0
    skipped: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def B(self) -> int:
        return self.t_star.shape[0]

    def reject(self, level: float = 0.05) -> bool:
        return self.p_value < level


def bootstrap_pvalue(statistic: float, t_star: np.ndarray) -> tuple[float, float]:
    """``(p_value, rank)`` with ``rank = mean(|stat| > |t*|)`` and ``p = 1 - rank``."""
    exceed = int(np.count_nonzero(abs(statistic) > np.abs(t_star)))
    B = t_star.shape[0]
    return (B - exceed) / B, exceed / B


@dataclass(frozen=True)
class NullFit:
    """Data-dependent pieces shared by every replication (scalar regressor)."""

    n: int
    beta0: float
    y: np.ndarray
    vhat: np.ndarray
    gram: float
    ctx: ProjectionContext
    utilde: np.ndarray
    fitted: np.ndarray
    adjustment: AdjustmentFactor


def restricted_residuals(dataset: Dataset, beta0: float, ctx: ProjectionContext | None = None) -> np.ndarray:
    """``y - x beta0 - W gamma~`` where ``gamma~`` is the null-restricted OLS fit."""
    if dataset.d_x != 1:
        raise DimensionMismatch("restricted_residuals needs a scalar regressor")
    if ctx is None:
        ctx = build_projection(dataset.W)
    return ctx.apply(dataset.y - dataset.x[:, 0] * beta0)


def _adjustment(y, vhat2, utilde, leverage, floor, scale: float = 0.0) -> AdjustmentFactor:
    sigma_acute = float(vhat2 @ (y * utilde / leverage))
    sigma_hat = float(vhat2 @ (utilde * utilde))
    # residuals at rounding level of the inputs count as identically zero
    if not sigma_hat > 1e-300 or np.max(np.abs(utilde)) <= _ZERO_REL * scale:
        raise DegenerateResiduals("null-restricted residuals are identically zero")
    clamped = sigma_acute < floor
    a_n = float(np.sqrt(max(sigma_acute, floor) / sigma_hat))
    return AdjustmentFactor(sigma_acute, sigma_hat, a_n, clamped)


def adjustment_factor(dataset: Dataset, ctx: ProjectionContext, vhat, beta0: float,
                      floor: float | None = None) -> AdjustmentFactor:
    """Scale applied to the null-imposed residuals (scalar regressor)."""
    ctx.require_leverage()
    vhat = np.asarray(vhat, dtype=np.float64).reshape(-1)
    utilde = restricted_residuals(dataset, beta0, ctx)
    floor = 1.0 / dataset.n if floor is None else floor
    return _adjustment(dataset.y, vhat * vhat, utilde, ctx.leverage, floor, _scale(dataset, beta0))


def _scale(dataset: Dataset, beta0: float) -> float:
    return float(max(np.max(np.abs(dataset.y)), np.max(np.abs(dataset.x[:, 0] * beta0))))


def prepare_null(dataset: Dataset, beta0: float, ctx: ProjectionContext | None = None,
                 floor: float | None = None) -> NullFit:
    if dataset.d_x != 1:
        raise DimensionMismatch("the wild bootstrap needs a scalar regressor; use score_bootstrap_test")
    if ctx is None:
        ctx = build_projection(dataset.W)
    ctx.require_leverage()
    part = partial_out(ctx, dataset.x)
    vhat = part.vhat[:, 0]
    utilde = restricted_residuals(dataset, beta0, ctx)
    floor = 1.0 / dataset.n if floor is None else floor
    adj = _adjustment(dataset.y, vhat * vhat, utilde, ctx.leverage, floor, _scale(dataset, beta0))
    return NullFit(
        n=dataset.n, beta0=float(beta0), y=dataset.y, vhat=vhat, gram=float(part.gram[0, 0]),
        ctx=ctx, utilde=utilde, fitted=dataset.y - utilde, adjustment=adj,
    )


def starred_statistics(null: NullFit, weights: np.ndarray, floor: float | None = None,
                       policy: str = "clamp"):
    """Bootstrap ``(beta* - beta0, t*, clamped)`` for each column of ``weights``.

    ``clamped`` marks replications whose leave-one-out meat was changed by
    the negative-meat ``policy`` (by default: raised to the floor).
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim == 1:
        weights = weights[:, None]
    if weights.shape[0] != null.n:
        raise DimensionMismatch(f"weights need {null.n} rows, got {weights.shape[0]}")
    floor = 1.0 / null.n if floor is None else floor
    vhat, s, m = null.vhat, null.gram, null.ctx.leverage
    u_star = (null.adjustment.a_n * null.utilde)[:, None] * weights
    dev = (vhat @ u_star) / s  # beta* - beta0
    # M y* = vhat beta0 + M u*, so uhat* = M u* - vhat (beta* - beta0)
    uhat = null.ctx.apply(u_star) - vhat[:, None] * dev[None, :]
    y_star = null.fitted[:, None] + u_star
    meat = (vhat * vhat / m) @ (y_star * uhat)
    meat, clamped = guard_meat(meat, floor, policy)
    t_star = dev * s / np.sqrt(meat)
    return dev, t_star, clamped


def _draw_chunks(key: StreamKey, scheme: str, n: int, B: int):
    for start in range(0, B, CHUNK):
        yield start, replication_weights(key, scheme, n, min(CHUNK, B - start), start)


def _run_chunks(fn, key, scheme, n, B, workers, weights):
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim == 1:
            weights = weights[:, None]
        if weights.shape != (n, B):
            raise DimensionMismatch(f"injected weights must have shape {(n, B)}, got {weights.shape}")
        chunks = [(s, weights[:, s:s + CHUNK]) for s in range(0, B, CHUNK)]
    else:
        chunks = list(_draw_chunks(key, scheme, n, B))
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda c: fn(c[1]), chunks))
    else:
        parts = [fn(w) for _, w in chunks]
    return [np.concatenate(p) for p in zip(*parts)]


def _resolve_workers(workers: int | None) -> int:
    return max(1, workers if workers else (os.cpu_count() or 1))


def wild_bootstrap_test(dataset: Dataset, beta0: float, config: BootstrapConfig | None = None,
                        ctx: ProjectionContext | None = None, weights=None) -> BootstrapOutcome:
    """Test ``beta = beta0`` with the modified wild bootstrap.

    ``config.mode`` selects the studentized statistic (``"percentile-t"``,
    the default) or the raw ``sqrt(n)(beta - beta0)`` (``"percentile"``);
    ``"score"`` dispatches to :func:`score_bootstrap_test` with ``c = 1``.
    ``weights`` (``n x B``) overrides the random draws.
    """
    config = config or BootstrapConfig()
    if config.mode == "score":
        return score_bootstrap_test(dataset, np.ones(1), beta0, config, ctx=ctx, weights=weights)
    if ctx is None:
        ctx = build_projection(dataset.W)
    floor = config.floor_for(dataset.n)
    null = prepare_null(dataset, beta0, ctx, floor)
    n = dataset.n

    def one(w):
        return starred_statistics(null, w, floor, config.negative_meat)

    dev, t_star, clamped = _run_chunks(one, config.key, config.weights, n, config.B,
                                       _resolve_workers(config.workers), weights)
    if config.mode == "percentile":
        fit = fit_ols(dataset, ctx)
        stat = np.sqrt(n) * (float(fit.beta[0]) - beta0)
        stars = np.sqrt(n) * dev
        observed_clamped = False
        clamps = 0
    else:
        res = t_test(fit_ols(dataset, ctx), "hca", beta0, config.negative_meat)
        stat, stars = res.t, t_star
        observed_clamped = res.clamped
        clamps = int(np.count_nonzero(clamped))
    p, rank = bootstrap_pvalue(stat, stars)
    return BootstrapOutcome(
        p_value=p, rank=rank, statistic=float(stat), t_star=stars, adjustment=null.adjustment,
        mode=config.mode, observed_clamped=observed_clamped, bootstrap_clamps=clamps,
    )


def percentile_bootstrap_test(dataset: Dataset, beta0: float, config: BootstrapConfig | None = None,
                              ctx: ProjectionContext | None = None, weights=None) -> BootstrapOutcome:
    config = config or BootstrapConfig()
    config = replace(config, mode="percentile")
    return wild_bootstrap_test(dataset, beta0, config, ctx=ctx, weights=weights)


def _sqrt_psd(A: np.ndarray, floor: float = 0.0, inverse: bool = False) -> tuple[np.ndarray, bool]:
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    floored = bool(vals.min() < floor)
    vals = np.maximum(vals, floor)
    root = np.sqrt(vals)
    if inverse:
        root = 1.0 / root
    return (vecs * root) @ vecs.T, floored


def score_bootstrap_test(dataset: Dataset, c, lam: float, config: BootstrapConfig | None = None,
                         ctx: ProjectionContext | None = None, weights=None) -> BootstrapOutcome:
    """Score bootstrap of ``c'beta = lam`` for a vector of regressors.

    Perturbs the null-restricted scores ``vhat_i utilde_i`` and rescales them
    with ``A = Sacute^{1/2} Shat^{-1/2}``; eigenvalues of ``Sacute`` below the
    floor are raised to it before the square root.
    """
    config = config or BootstrapConfig(mode="score")
    if ctx is None:
        ctx = build_projection(dataset.W)
    ctx.require_leverage()
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    n = dataset.n
    floor = config.floor_for(n)
    fit = fit_ols(dataset, ctx)
    beta_r, _ = constrained_ols(dataset, c, lam, ctx)
    utilde = ctx.apply(dataset.y - dataset.x @ beta_r)
    vhat = fit.vhat
    scores = vhat * utilde[:, None]
    acute_w = dataset.y * utilde / ctx.leverage
    sigma_acute = (vhat * acute_w[:, None]).T @ vhat
    sigma_acute = 0.5 * (sigma_acute + sigma_acute.T)
    sigma_hat = scores.T @ scores
    if np.linalg.eigvalsh(sigma_hat).min() <= 1e-300:
        raise NonPSDAdjustment("score outer-product matrix is not positive definite")
    root_acute, clamped = _sqrt_psd(sigma_acute, floor)
    inv_root_hat, _ = _sqrt_psd(sigma_hat, inverse=True)
    A = root_acute @ inv_root_hat
    # row vector c' (G/n)^{-1} A n^{-1/2}
    lead = np.linalg.solve(fit.gram / n, c) @ A / np.sqrt(n)
    proj = scores @ lead

    def one(w):
        return (proj @ w,)

    (t_star,) = _run_chunks(one, config.key, config.weights, n, config.B,
                            _resolve_workers(config.workers), weights)
    stat = np.sqrt(n) * (float(c @ fit.beta) - lam)
    p, rank = bootstrap_pvalue(stat, t_star)
    d = dataset.d_x
    adj = AdjustmentFactor(
        sigma_acute=sigma_acute if d > 1 else float(sigma_acute[0, 0]),
        sigma_hat=sigma_hat if d > 1 else float(sigma_hat[0, 0]),
        a_n=A if d > 1 else float(A[0, 0]),
        clamped=clamped,
    )
    return BootstrapOutcome(p_value=p, rank=rank, statistic=float(stat), t_star=t_star,
                            adjustment=adj, mode="score", extra={"beta_restricted": beta_r})


def appendix_identity_check(ctx: ProjectionContext, vhat, u_star) -> float:
    """Max deviation between two evaluations of the bootstrap leave-one-out residual.

    Route one refits the starred data through the implicit annihilator; route
    two applies ``A_ij = (M_ij - vhat_i vhat_j / sum vhat^2) / M_ii`` densely.
    """
    vhat = np.asarray(vhat, dtype=np.float64).reshape(-1)
    u_star = np.asarray(u_star, dtype=np.float64).reshape(-1)
    n = ctx.n
    s = float(vhat @ vhat)
    m = ctx.leverage
    beta_star = (vhat @ u_star) / s
    direct = ctx.apply(u_star - vhat * beta_star) / m
    M = ctx.matrix()
    H = M - np.outer(vhat, vhat) / s
    A = H / m[:, None]
    via_A = A @ u_star
    return float(np.max(np.abs(direct - via_A))) if n else 0.0
