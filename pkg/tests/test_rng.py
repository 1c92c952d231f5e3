from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from manyboot.rng import (
    MAMMEN_HIGH,
    MAMMEN_LOW,
    WEIGHT_SCHEMES,
    StreamKey,
    derive,
    derive_words,
    philox4x32,
    replication_weights,
)

# Random123 known-answer vectors for philox4x32-10
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]


@pytest.mark.parametrize("ctr, key, expected", KAT)
def test_philox_known_answers(ctr, key, expected):
    out = philox4x32(*ctr, *key)
    assert tuple(int(w) for w in out) == expected


def test_philox_broadcasts_like_scalar_calls():
    ctr = np.arange(5)
    vec = philox4x32(ctr, 1, 2, 3, 4, 5)
    for i in range(5):
        single = philox4x32(i, 1, 2, 3, 4, 5)
        assert all(int(v[i]) == int(s) for v, s in zip(vec, single))


def test_positions_are_random_access():
    key = StreamKey.root(11).derive("x")
    whole = key.normal(1000)
    assert_array_equal(key.normal(100, offset=450), whole[450:550])


def test_derivation_is_pure_and_distinct():
    root = StreamKey.root(3)
    assert root.derive("rep", 5) == derive(root, "rep", 5)
    kids = {root.derive("rep", i).words for i in range(2000)}
    kids |= {root.derive("other", i).words for i in range(2000)}
    assert len(kids) == 4000
    assert StreamKey.root(3).words != StreamKey.root(4).words


def test_derive_words_matches_scalar_derive():
    root = StreamKey.root(99).derive("cell")
    w = derive_words(root, "replication", np.arange(7))
    for i in range(7):
        assert tuple(int(a[i]) for a in w) == root.derive("replication", i).words


def test_replication_weights_are_chunk_invariant():
    key = StreamKey.root(5)
    full = replication_weights(key, "gaussian", 30, 50)
    parts = np.hstack([replication_weights(key, "gaussian", 30, 20, 0),
                       replication_weights(key, "gaussian", 30, 30, 20)])
    assert_array_equal(full, parts)
    assert_array_equal(full[:, 7], key.derive("replication", 7).normal(30))


def test_uniform_ks():
    u = StreamKey.root(1).uniform(200_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_normal_ks():
    z = StreamKey.root(2).normal(200_000)
    assert stats.kstest(z, "norm").pvalue > 1e-3


@pytest.mark.parametrize("scheme", WEIGHT_SCHEMES)
def test_weight_moments(scheme):
    n = 1_000_000
    w = StreamKey.root(17).derive(scheme).weights(scheme, n)
    # sd of the sample variance is sqrt((mu4 - 1) / n)
    mu4 = {"gaussian": 3.0, "rademacher": 1.0, "mammen": 2.0}[scheme]
    assert abs(w.mean()) < 5 / np.sqrt(n)
    assert abs(w.var() - 1.0) < 5 * np.sqrt(max(mu4 - 1.0, 1e-3) / n) + 1e-12


def test_rademacher_and_mammen_support():
    key = StreamKey.root(8)
    assert set(np.unique(key.rademacher(5000))) == {-1.0, 1.0}
    m = key.mammen(5000)
    assert set(np.unique(m)) == {MAMMEN_LOW, MAMMEN_HIGH}
    # third moment of Mammen weights is one
    big = key.mammen(1_000_000)
    assert_allclose((big**3).mean(), 1.0, atol=0.01)


def test_unknown_scheme_rejected():
    with pytest.raises(ValueError):
        StreamKey.root(0).weights("uniform", 3)
    with pytest.raises(ValueError):
        StreamKey.root(0).derive("x", -1)


def test_bernoulli_rate():
    b = StreamKey.root(4).bernoulli(0.02, 500_000)
    assert abs(b.mean() - 0.02) < 5 * np.sqrt(0.02 * 0.98 / 500_000)
