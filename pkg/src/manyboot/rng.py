"""Counter-based random streams.

Every draw is a pure function of ``(stream, position)``: a Philox4x32-10
block is computed from a 64-bit key and a 128-bit counter, so any element of
any stream can be produced without generating the ones before it. Streams are
derived from a master seed along a path of ``(purpose, index)`` pairs, which
makes replications reproducible under any execution order or worker count.

Counter layout for a stream with identity ``(k0, k1, s2, s3)``::

    key     = (k0, k1)
    counter = (pos & 0xffffffff, pos >> 32, s2, s3)

A child stream is the Philox block of ``(index_lo, index_hi, tag, DERIVE)``
under the parent key, xor-ed with the parent's lane words. Philox is a
bijection of the counter for a fixed key, so children of one parent are
distinct for distinct ``(purpose, index)``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

_M32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_MUL_A = np.uint64(0xD2511F53)
_MUL_B = np.uint64(0xCD9E8D57)
_WEYL_A = np.uint64(0x9E3779B9)
_WEYL_B = np.uint64(0xBB67AE85)

_DERIVE = 0x5EED0D1E
_ROOT = 0x0DDBA11
_TWO_M53 = 2.0**-53

MAMMEN_LOW = -(np.sqrt(5.0) - 1.0) / 2.0
MAMMEN_HIGH = (np.sqrt(5.0) + 1.0) / 2.0
MAMMEN_P_LOW = (np.sqrt(5.0) + 1.0) / (2.0 * np.sqrt(5.0))

WEIGHT_SCHEMES = ("gaussian", "rademacher", "mammen")


def philox4x32(c0, c1, c2, c3, k0, k1, rounds: int = 10):
    """Philox4x32 block function on broadcastable arrays of 32-bit words.

    Inputs may be Python ints or integer arrays; they are broadcast against
    each other. Returns four ``uint64`` arrays holding 32-bit values.
    """
    c0, c1, c2, c3, k0, k1 = (
        np.asarray(a, dtype=np.uint64) & _M32 for a in (c0, c1, c2, c3, k0, k1)
    )
    c0, c1, c2, c3, k0, k1 = np.broadcast_arrays(c0, c1, c2, c3, k0, k1)
    for r in range(rounds):
        p0 = _MUL_A * c0
        p1 = _MUL_B * c2
        c0, c1, c2, c3 = (
            (p1 >> _S32) ^ c1 ^ k0,
            p1 & _M32,
            (p0 >> _S32) ^ c3 ^ k1,
            p0 & _M32,
        )
        if r < rounds - 1:
            k0 = (k0 + _WEYL_A) & _M32
            k1 = (k1 + _WEYL_B) & _M32
    return c0, c1, c2, c3


def _tag(purpose: str | int) -> int:
    if isinstance(purpose, (int, np.integer)):
        return int(purpose) & 0xFFFFFFFF
    return zlib.crc32(str(purpose).encode("utf-8"))


def _split_index(index):
    idx = np.asarray(index, dtype=np.uint64)
    return idx & _M32, idx >> _S32


@dataclass(frozen=True)
class StreamKey:
    """Identity of one random stream.

    ``seed`` and ``path`` describe where the stream came from; ``words`` are
    the four 32-bit words actually fed to Philox. Two keys with equal
    ``words`` produce identical draws.
    """

    seed: int
    path: tuple[tuple[str, int], ...] = ()
    words: tuple[int, int, int, int] = field(default=(0, 0, 0, 0), repr=False)

    @classmethod
    def root(cls, seed: int) -> StreamKey:
        seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        w = philox4x32(0, 0, 0, _ROOT, seed & 0xFFFFFFFF, seed >> 32)
        return cls(seed=seed, path=(), words=tuple(int(v) for v in w))

    def derive(self, purpose: str | int, index: int = 0) -> StreamKey:
        """Child stream for ``(purpose, index)``."""
        return derive(self, purpose, index)

    # -- sampling ---------------------------------------------------------

    def _blocks(self, size, offset: int = 0):
        n = int(np.prod(size)) if np.ndim(size) else int(size)
        pos = np.arange(offset, offset + n, dtype=np.uint64)
        lo, hi = _split_index(pos)
        k0, k1, s2, s3 = self.words
        out = philox4x32(lo, hi, s2, s3, k0, k1)
        return tuple(w.reshape(size) for w in out)

    def uniform(self, size, offset: int = 0) -> np.ndarray:
        """Uniform draws on [0, 1) with 53-bit resolution."""
        w0, w1, _, _ = self._blocks(size, offset)
        return _uniform53(w0, w1)

    def normal(self, size, offset: int = 0) -> np.ndarray:
        return _normal_from_words(*self._blocks(size, offset))

    def rademacher(self, size, offset: int = 0) -> np.ndarray:
        return _rademacher_from_words(*self._blocks(size, offset))

    def mammen(self, size, offset: int = 0) -> np.ndarray:
        return _mammen_from_words(*self._blocks(size, offset))

    def bernoulli(self, p: float, size, offset: int = 0) -> np.ndarray:
        return (self.uniform(size, offset) < p).astype(np.float64)

    def weights(self, scheme: str, size, offset: int = 0) -> np.ndarray:
        return _SAMPLERS[_check_scheme(scheme)](*self._blocks(size, offset))


def derive(key: StreamKey, purpose: str | int, index: int = 0) -> StreamKey:
    """Child of ``key`` for ``(purpose, index)``. Pure and deterministic."""
    if index < 0:
        raise ValueError("stream index must be non-negative")
    k0, k1, s2, s3 = key.words
    lo, hi = int(index) & 0xFFFFFFFF, int(index) >> 32
    w = philox4x32(lo, hi, _tag(purpose), _DERIVE, k0, k1)
    words = (int(w[0]), int(w[1]), int(w[2]) ^ s2, int(w[3]) ^ s3)
    return StreamKey(seed=key.seed, path=key.path + ((str(purpose), int(index)),), words=words)


def derive_words(key: StreamKey, purpose: str | int, indices) -> tuple[np.ndarray, ...]:
    """Vectorized ``derive``: Philox words of the children for many indices."""
    k0, k1, s2, s3 = key.words
    lo, hi = _split_index(indices)
    w = philox4x32(lo, hi, _tag(purpose), _DERIVE, k0, k1)
    return w[0], w[1], w[2] ^ np.uint64(s2), w[3] ^ np.uint64(s3)


def replication_weights(key: StreamKey, scheme: str, n: int, reps: int, start: int = 0) -> np.ndarray:
    """``n x reps`` weight matrix; column ``b`` is stream ``key.derive("replication", start + b)``.

    Column ``b`` depends only on ``(key, start + b)``, so splitting the
    replications into chunks yields the same matrix as drawing them at once.
    """
    sampler = _SAMPLERS[_check_scheme(scheme)]
    k0, k1, s2, s3 = derive_words(key, "replication", np.arange(start, start + reps))
    pos = np.arange(n, dtype=np.uint64)[:, None]
    return sampler(*philox4x32(pos, 0, s2[None, :], s3[None, :], k0[None, :], k1[None, :]))


def _check_scheme(scheme: str) -> str:
    s = scheme.lower()
    if s not in _SAMPLERS:
        raise ValueError(f"unknown weight scheme {scheme!r}; expected one of {WEIGHT_SCHEMES}")
    return s


def _uniform53(w0, w1) -> np.ndarray:
    return ((w0 >> np.uint64(5)) * np.uint64(1 << 26) + (w1 >> np.uint64(6))).astype(np.float64) * _TWO_M53


def _normal_from_words(w0, w1, w2, w3) -> np.ndarray:
    # Box-Muller, one normal per block so every position is self-contained
    u1 = 1.0 - _uniform53(w0, w1)
    u2 = _uniform53(w2, w3)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _rademacher_from_words(w0, w1, w2, w3) -> np.ndarray:
    return np.where(w0 & np.uint64(1), 1.0, -1.0)


def _mammen_from_words(w0, w1, w2, w3) -> np.ndarray:
    return np.where(_uniform53(w0, w1) < MAMMEN_P_LOW, MAMMEN_LOW, MAMMEN_HIGH)


_SAMPLERS = {
    "gaussian": _normal_from_words,
    "rademacher": _rademacher_from_words,
    "mammen": _mammen_from_words,
}
