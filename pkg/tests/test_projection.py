from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

import oracles
from helpers import random_instance
from manyboot import Dataset, build_projection, constrained_ols, partial_out, restricted_gamma
from manyboot.errors import (
    CollinearRegressor,
    DegenerateConstraint,
    DimensionMismatch,
    LeverageDegenerate,
    NonFiniteInput,
)
from manyboot.projection import dependent_columns


def test_dataset_shapes_and_validation():
    d = Dataset(np.arange(4.0), np.ones(4), np.zeros((4, 0)))
    assert (d.n, d.q, d.d_x) == (4, 0, 1)
    with pytest.raises(DimensionMismatch):
        Dataset(np.ones(4), np.ones(3), np.ones((4, 1)))
    with pytest.raises(NonFiniteInput):
        Dataset(np.array([1.0, np.nan, 2.0]), np.ones(3), np.ones((3, 1)))


@pytest.mark.parametrize("ratio", [0.1, 0.5, 0.9])
def test_annihilator_matches_dense(ratio):
    rng = np.random.default_rng(int(ratio * 10))
    data, _ = random_instance(rng, n=80, ratio=ratio)
    ctx = build_projection(data.W)
    M = oracles.annihilator(data.W)
    assert_allclose(ctx.matrix(), M, atol=1e-12)
    assert_allclose(ctx.leverage, np.diag(M), atol=1e-12)
    v = rng.normal(size=(80, 3))
    assert_allclose(ctx.apply(v), M @ v, atol=1e-12)


def test_rank_deficient_controls():
    rng = np.random.default_rng(0)
    W = rng.normal(size=(30, 4))
    W = np.column_stack([W, W[:, 0] + W[:, 1]])
    ctx = build_projection(W)
    assert ctx.rank == 4 and ctx.rank_deficient
    assert_allclose(ctx.matrix(), oracles.annihilator(W), atol=1e-10)
    assert dependent_columns(W).tolist() in ([0], [1], [4])


def test_no_controls_is_identity():
    ctx = build_projection(np.zeros((5, 0)))
    assert ctx.rank == 0
    assert_allclose(ctx.apply(np.arange(5.0)), np.arange(5.0))
    assert_allclose(ctx.leverage, 1.0)


def test_leverage_one_rows_detected():
    W = np.zeros((6, 2))
    W[:, 0] = 1
    W[2, 1] = 1  # singleton dummy isolates observation 2
    ctx = build_projection(W)
    assert ctx.degenerate_rows().tolist() == [2]
    with pytest.raises(LeverageDegenerate) as err:
        ctx.require_leverage()
    assert err.value.rows == (2,)


def test_dense_threshold():
    ctx = build_projection(np.ones((20, 1)), dense_threshold=10)
    with pytest.raises(MemoryError):
        ctx.matrix()
    assert ctx.matrix(force=True).shape == (20, 20)


def test_partial_out_and_collinearity():
    rng = np.random.default_rng(1)
    W = rng.normal(size=(40, 5))
    ctx = build_projection(W)
    x = rng.normal(size=(40, 2))
    part = partial_out(ctx, x)
    assert_allclose(W.T @ part.vhat, 0, atol=1e-10)
    assert_allclose(part.gram, part.vhat.T @ part.vhat)
    with pytest.raises(CollinearRegressor):
        partial_out(ctx, W[:, :1] * 2 - W[:, 1:2])


def test_restricted_gamma_minimum_norm():
    rng = np.random.default_rng(2)
    W = rng.normal(size=(25, 3))
    W = np.column_stack([W, W[:, 0]])
    z = rng.normal(size=25)
    g = restricted_gamma(W, z)
    assert_allclose(g, np.linalg.pinv(W) @ z, atol=1e-10)


@pytest.mark.parametrize("d_x", [1, 2, 3])
def test_constrained_ols_matches_kkt(d_x):
    rng = np.random.default_rng(10 + d_x)
    data, _ = random_instance(rng, n=60, ratio=0.3, d_x=d_x)
    c = rng.normal(size=d_x)
    lam = 0.7
    beta, gamma = constrained_ols(data, c, lam)
    b_ref, g_ref = oracles.constrained_kkt(data.y, data.x, data.W, c, lam)
    assert_allclose(c @ beta, lam, atol=1e-12)
    assert_allclose(beta, b_ref, rtol=1e-8, atol=1e-10)
    assert_allclose(gamma, g_ref, rtol=1e-7, atol=1e-9)


def test_constrained_ols_zero_vector():
    data, _ = random_instance(np.random.default_rng(3), n=30, ratio=0.2, d_x=2)
    with pytest.raises(DegenerateConstraint):
        constrained_ols(data, [0.0, 0.0], 1.0)
