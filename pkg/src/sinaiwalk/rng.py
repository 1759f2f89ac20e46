"""Counter-based random numbers and exact discrete samplers.

Every random draw in the package is a pure function of a 64-bit stream key and
a counter.  Keys are derived from ``(master_seed, label, ...)`` so that a site's
environment value, a site's initial particle count and a trial's dynamics never
share draws, and so that regenerating a window of any size reproduces the same
values.  The mixing function is the SplitMix64 finalizer.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numba as nb
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# signed lattice indices are shifted so the counter stays non-negative
SITE_OFFSET = 1 << 62


def derive_key(master_seed: int, *labels) -> int:
    """64-bit stream key for ``(master_seed, *labels)``."""
    text = repr((int(master_seed),) + tuple(labels)).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


@nb.njit(inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(inline="always")
def uniform_at(key, counter):
    """Uniform on the open interval (0, 1) for draw ``counter`` of stream ``key``."""
    z = mix64(np.uint64(key) + np.uint64(counter) * GOLDEN)
    return (np.float64(z >> _S11) + 0.5) * _INV53


@nb.njit(cache=True)
def uniforms_for_sites(key, lo, n):
    out = np.empty(n, dtype=np.float64)
    base = np.int64(lo) + np.int64(SITE_OFFSET)
    k = np.uint64(key)
    for j in range(n):
        out[j] = uniform_at(k, np.uint64(base + j))
    return out


@nb.njit(inline="always")
def next_uniform(state):
    """Draw from ``state = [key, counter]`` and advance the counter in place."""
    u = uniform_at(state[0], state[1])
    state[1] += np.uint64(1)
    return u


@nb.njit(cache=True)
def _binomial_inversion(n, p, state):
    # p <= 1/2 and n*p < 10, so q**n is far from underflow
    q = 1.0 - p
    s = p / q
    a = (n + 1) * s
    while True:
        r = q ** n
        u = next_uniform(state)
        x = 0
        while u > r:
            u -= r
            x += 1
            if x > n:
                break
            r *= a / x - s
        if x <= n:
            return x


@nb.njit(cache=True)
def _binomial_btrs(n, p, state):
    # Hormann (1993) transformed rejection with squeeze; requires p <= 1/2, n*p >= 10
    q = 1.0 - p
    spq = np.sqrt(n * p * q)
    b = 1.15 + 2.53 * spq
    a = -0.0873 + 0.0248 * b + 0.01 * p
    c = n * p + 0.5
    v_r = 0.92 - 4.2 / b
    alpha = (2.83 + 5.1 / b) * spq
    lpq = np.log(p / q)
    m = np.floor((n + 1) * p)
    h = math.lgamma(m + 1.0) + math.lgamma(n - m + 1.0)
    while True:
        u = next_uniform(state) - 0.5
        v = next_uniform(state)
        us = 0.5 - abs(u)
        k = np.floor((2.0 * a / us + b) * u + c)
        if k < 0.0 or k > n:
            continue
        if us >= 0.07 and v <= v_r:
            return np.int64(k)
        v = np.log(v * alpha / (a / (us * us) + b))
        if v <= h - math.lgamma(k + 1.0) - math.lgamma(n - k + 1.0) + (k - m) * lpq:
            return np.int64(k)


@nb.njit(cache=True)
def binomial(n, p, state):
    """Exact Binomial(n, p) draw: inversion when n*min(p, 1-p) < 10, BTRS otherwise."""
    if n <= 0 or p <= 0.0:
        return np.int64(0)
    if p >= 1.0:
        return np.int64(n)
    flip = p > 0.5
    pp = 1.0 - p if flip else p
    if n * pp < 10.0:
        k = _binomial_inversion(n, pp, state)
    else:
        k = _binomial_btrs(n, pp, state)
    return np.int64(n - k) if flip else np.int64(k)


@nb.njit(cache=True)
def _binomial_many(n, p, size, state):
    out = np.empty(size, dtype=np.int64)
    for j in range(size):
        out[j] = binomial(n, p, state)
    return out


def binomial_many(n, p, size, key, counter):
    """``size`` iid Binomial(n, p) draws; returns the draws and the advanced counter."""
    state = np.array([key, counter], dtype=np.uint64)
    out = _binomial_many(int(n), float(p), int(size), state)
    return out, int(state[1])


@dataclass
class RngStream:
    """A mutable cursor over one counter-based stream.

    Engines read ``key`` and ``counter`` and advance ``counter`` by exactly the
    number of uniforms they consumed, so successive calls never reuse draws.
    """

    key: int
    counter: int = 0

    @classmethod
    def for_trial(cls, master_seed: int, *labels) -> "RngStream":
        return cls(derive_key(master_seed, "dynamics", *labels), 0)

    def state(self) -> np.ndarray:
        return np.array([self.key, self.counter], dtype=np.uint64)

    def sync(self, state: np.ndarray) -> None:
        self.counter = int(state[1])

    def uniforms(self, size: int) -> np.ndarray:
        out = uniforms_for_sites(np.uint64(self.key), self.counter - SITE_OFFSET, size)
        self.counter += size
        return out
