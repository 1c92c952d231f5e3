from __future__ import annotations

import numpy as np

from manyboot import Dataset


def random_instance(rng, n=None, ratio=None, d_x=1, hetero=True):
    """Gaussian controls with an intercept, heteroskedastic errors."""
    n = n or int(rng.integers(20, 201))
    ratio = rng.uniform(0.0, 0.9) if ratio is None else ratio
    q = min(int(round(ratio * n)), n - d_x - 2)
    W = np.column_stack([np.ones(n), rng.normal(size=(n, q - 1))]) if q >= 1 else np.zeros((n, 0))
    x = rng.normal(size=(n, d_x)) + 0.3 * (W[:, :1] if q else 0)
    scale = np.exp(0.5 * x[:, 0]) if hetero else 1.0
    beta = rng.normal(size=d_x)
    y = x @ beta + scale * rng.normal(size=n)
    return Dataset(y, x, W), beta
