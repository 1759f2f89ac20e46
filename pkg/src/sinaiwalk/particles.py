"""Poisson fields of independent walks in a fixed environment.

Two sampling engines evolve occupation counts under the quenched law: binomial
splitting of site counts (the default) and independent per-particle walks.  The
exact law of a single walk and the exact mean occupation of a Poisson field are
propagated by the same linear recursion, without renormalisation.  Mass that
crosses the window edge is absorbed and counted.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numba as nb
import numpy as np
from scipy import stats

from .environment import ConfigError, Environment
from .rng import RngStream, binomial, derive_key, next_uniform, uniform_at, uniforms_for_sites

ENGINES = ("split", "per_particle")
# below this count a sum of Bernoulli draws is cheaper than a binomial draw
_BERNOULLI_MAX = 8


@dataclass(frozen=True, eq=False)
class ParticleField:
    lo: int
    hi: int
    counts: np.ndarray
    origin_label: object = None
    elapsed: int = 0
    leaked_left: int = 0
    leaked_right: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def conserved_total(self) -> int:
        return self.total + self.leaked_left + self.leaked_right

    def count_at(self, x: int) -> int:
        return int(self.counts[x - self.lo])

    def restricted(self, a: int, b: int, label=None) -> "ParticleField":
        """Copy keeping only the particles on sites [a, b] (others removed)."""
        c = np.zeros_like(self.counts)
        ia, ib = max(a, self.lo) - self.lo, min(b, self.hi) - self.lo
        if ia <= ib:
            c[ia:ib + 1] = self.counts[ia:ib + 1]
        return replace(self, counts=c, origin_label=label, leaked_left=0, leaked_right=0)


@dataclass(frozen=True, eq=False)
class LawVector:
    lo: int
    hi: int
    probs: np.ndarray
    start: int
    steps: int
    leak_left: float = 0.0
    leak_right: float = 0.0

    def prob(self, x: int) -> float:
        if self.lo <= x <= self.hi:
            return float(self.probs[x - self.lo])
        return 0.0

    @property
    def leak(self) -> float:
        return self.leak_left + self.leak_right


@dataclass(frozen=True, eq=False)
class MeanField:
    lo: int
    hi: int
    means: np.ndarray
    steps: int = 0
    leak_left: float = 0.0
    leak_right: float = 0.0


# ---------------------------------------------------------------------------
# kernels

@nb.njit(cache=True)
def _split_steps(counts, alpha, steps, state):
    n = counts.size
    cur = counts.copy()
    nxt = np.zeros_like(cur)
    leak_l = 0
    leak_r = 0
    a = 0
    while a < n and cur[a] == 0:
        a += 1
    b = n - 1
    while b >= 0 and cur[b] == 0:
        b -= 1
    if a > b:
        return cur, 0, 0
    for _ in range(steps):
        lo = max(a - 1, 0)
        hi = min(b + 1, n - 1)
        for i in range(lo, hi + 1):
            nxt[i] = 0
        for i in range(a, b + 1):
            c = cur[i]
            if c == 0:
                continue
            if c <= _BERNOULLI_MAX:
                r = 0
                p = alpha[i]
                for _ in range(c):
                    r += next_uniform(state) < p
            else:
                r = binomial(c, alpha[i], state)
            if i + 1 < n:
                nxt[i + 1] += r
            else:
                leak_r += r
            if i >= 1:
                nxt[i - 1] += c - r
            else:
                leak_l += c - r
        for i in range(a, b + 1):
            cur[i] = 0
        tmp = cur
        cur = nxt
        nxt = tmp
        a, b = lo, hi
        while a <= b and cur[a] == 0:
            a += 1
        while b >= a and cur[b] == 0:
            b -= 1
        if a > b:
            break
    return cur, leak_l, leak_r


@nb.njit(inline="always")
def _walk_one(x, alpha, first, steps, k, c):
    # steps [first, steps) of one walk; returns (position, status)
    n = alpha.size
    for s in range(first, steps):
        u = uniform_at(k, c + np.uint64(s))
        x += 2 * np.int64(u < alpha[x]) - 1
        if x < 0:
            return x, -1
        if x >= n:
            return x, 1
    return x, 0


@nb.njit(cache=True)
def _walk_particles(pos, alpha, steps, key, counter0):
    """Independent walks on array indices [0, n); status -1/+1 = absorbed left/right.

    Draw s of particle j is uniform number counter0 + j*steps + s.  Particles go
    through in groups of four so the four dependency chains overlap; a group
    that touches the boundary is finished one walk at a time.
    """
    n = alpha.size
    m = pos.size
    out = pos.copy()
    status = np.zeros(m, np.int8)
    k = np.uint64(key)
    st = np.uint64(steps)
    j = 0
    while j + 4 <= m:
        c0 = np.uint64(counter0) + np.uint64(j) * st
        c1 = c0 + st
        c2 = c1 + st
        c3 = c2 + st
        x0, x1, x2, x3 = pos[j], pos[j + 1], pos[j + 2], pos[j + 3]
        s = 0
        while s < steps:
            y0 = x0 + 2 * np.int64(uniform_at(k, c0 + np.uint64(s)) < alpha[x0]) - 1
            y1 = x1 + 2 * np.int64(uniform_at(k, c1 + np.uint64(s)) < alpha[x1]) - 1
            y2 = x2 + 2 * np.int64(uniform_at(k, c2 + np.uint64(s)) < alpha[x2]) - 1
            y3 = x3 + 2 * np.int64(uniform_at(k, c3 + np.uint64(s)) < alpha[x3]) - 1
            if min(min(y0, y1), min(y2, y3)) < 0 or max(max(y0, y1), max(y2, y3)) >= n:
                break
            x0, x1, x2, x3 = y0, y1, y2, y3
            s += 1
        if s < steps:
            out[j], status[j] = _walk_one(x0, alpha, s, steps, k, c0)
            out[j + 1], status[j + 1] = _walk_one(x1, alpha, s, steps, k, c1)
            out[j + 2], status[j + 2] = _walk_one(x2, alpha, s, steps, k, c2)
            out[j + 3], status[j + 3] = _walk_one(x3, alpha, s, steps, k, c3)
        else:
            out[j], out[j + 1], out[j + 2], out[j + 3] = x0, x1, x2, x3
        j += 4
    while j < m:
        out[j], status[j] = _walk_one(pos[j], alpha, 0, steps, k,
                                      np.uint64(counter0) + np.uint64(j) * st)
        j += 1
    return out, status


@nb.njit(cache=True)
def _forward(p0, alpha, steps, a, b):
    """p_{k+1}[i] = alpha[i-1] p_k[i-1] + (1 - alpha[i+1]) p_k[i+1], absorbing edges."""
    n = p0.size
    right = alpha.copy()
    left = 1.0 - alpha
    cur = p0.copy()
    nxt = np.zeros(n)
    leak_l = 0.0
    leak_r = 0.0
    for _ in range(steps):
        lo = max(a - 1, 0)
        hi = min(b + 1, n - 1)
        leak_l += left[0] * cur[0]
        leak_r += right[n - 1] * cur[n - 1]
        for i in range(lo, hi + 1):
            v = 0.0
            if i >= 1:
                v += right[i - 1] * cur[i - 1]
            if i + 1 < n:
                v += left[i + 1] * cur[i + 1]
            nxt[i] = v
        tmp = cur
        cur = nxt
        nxt = tmp
        a, b = lo, hi
    return cur, leak_l, leak_r


@nb.njit(cache=True)
def _forward_full(p0, alpha, steps):
    # whole-window version of _forward, written for vectorisation
    n = p0.size
    right = alpha.copy()
    left = 1.0 - alpha
    cur = p0.copy()
    nxt = np.zeros(n)
    leak_l = 0.0
    leak_r = 0.0
    for _ in range(steps):
        leak_l += left[0] * cur[0]
        leak_r += right[n - 1] * cur[n - 1]
        nxt[0] = left[1] * cur[1] if n > 1 else 0.0
        for i in range(1, n - 1):
            nxt[i] = right[i - 1] * cur[i - 1] + left[i + 1] * cur[i + 1]
        if n > 1:
            nxt[n - 1] = right[n - 2] * cur[n - 2]
        tmp = cur
        cur = nxt
        nxt = tmp
    return cur, leak_l, leak_r


@nb.njit(cache=True)
def _backward(h0, alpha, steps):
    """h_{k+1}[x] = alpha[x] h_k[x+1] + (1 - alpha[x]) h_k[x-1]; h = 0 off the window."""
    n = h0.size
    right = alpha.copy()
    left = 1.0 - alpha
    cur = h0.copy()
    nxt = np.zeros(n)
    for _ in range(steps):
        if n == 1:
            nxt[0] = 0.0
        else:
            nxt[0] = right[0] * cur[1]
            for i in range(1, n - 1):
                nxt[i] = right[i] * cur[i + 1] + left[i] * cur[i - 1]
            nxt[n - 1] = left[n - 1] * cur[n - 2]
        tmp = cur
        cur = nxt
        nxt = tmp
    return cur


# ---------------------------------------------------------------------------
# helpers

def _steps(t) -> int:
    if t < 0:
        raise ValueError("t must be non-negative")
    return int(math.floor(t))


def _alpha_window(env: Environment, lo: int, hi: int) -> np.ndarray:
    if lo < env.lo or hi > env.hi:
        raise IndexError(f"window [{lo}, {hi}] not inside environment [{env.lo}, {env.hi}]")
    return np.ascontiguousarray(env.alpha[lo - env.lo:hi - env.lo + 1])


def poisson_counts(lam: float, key: int, lo: int, hi: int) -> np.ndarray:
    u = uniforms_for_sites(np.uint64(key), lo, hi - lo + 1)
    return stats.poisson.ppf(u, lam).astype(np.int64)


# ---------------------------------------------------------------------------
# public operations

def init_field(lam: float, lo: int, hi: int, seed: int) -> ParticleField:
    """i.i.d. Poisson(lam) counts on [lo, hi]; site i's count depends only on (seed, i)."""
    if not lam > 0:
        raise ConfigError(f"lambda must be positive, got {lam}")
    if hi < lo:
        raise ConfigError(f"empty window [{lo}, {hi}]")
    key = derive_key(seed, "initial-counts")
    return ParticleField(lo, hi, poisson_counts(lam, key, lo, hi))


def evolve_field(field: ParticleField, env: Environment, t, rng_stream: RngStream,
                 engine: str = "split") -> ParticleField:
    """Advance every particle floor(t) steps; the window edges absorb."""
    steps = _steps(t)
    alpha = _alpha_window(env, field.lo, field.hi)
    if steps == 0:
        return field
    if engine == "split":
        state = rng_stream.state()
        counts, ll, lr = _split_steps(field.counts, alpha, steps, state)
        rng_stream.sync(state)
    elif engine == "per_particle":
        pos = np.repeat(np.arange(field.counts.size), field.counts)
        out, status = _walk_particles(pos, alpha, steps, np.uint64(rng_stream.key),
                                      np.uint64(rng_stream.counter))
        rng_stream.counter += int(pos.size) * steps
        counts = np.bincount(out[status == 0], minlength=field.counts.size).astype(np.int64)
        ll, lr = int((status == -1).sum()), int((status == 1).sum())
    else:
        raise ConfigError(f"unknown engine {engine!r}; expected one of {ENGINES}")
    return replace(field, counts=counts, elapsed=field.elapsed + steps,
                   leaked_left=field.leaked_left + int(ll),
                   leaked_right=field.leaked_right + int(lr))


def step_field(field: ParticleField, env: Environment, rng_stream: RngStream) -> ParticleField:
    return evolve_field(field, env, 1, rng_stream, engine="split")


def evolve_per_particle(positions, env: Environment, t, rng_stream: RngStream,
                        window: tuple[int, int] | None = None):
    """Move each particle independently for floor(t) steps.

    Returns ``(final_positions, leaked_left, leaked_right)``; particles that
    leave ``window`` (default: the environment window) are absorbed and only
    counted.
    """
    lo, hi = window if window is not None else (env.lo, env.hi)
    alpha = _alpha_window(env, lo, hi)
    pos = np.asarray(positions, dtype=np.int64)
    if pos.size and (pos.min() < lo or pos.max() > hi):
        raise IndexError("particle outside the simulation window")
    steps = _steps(t)
    if pos.size == 0 or steps == 0:
        return pos.copy(), 0, 0
    out, status = _walk_particles(pos - lo, alpha, steps, np.uint64(rng_stream.key),
                                  np.uint64(rng_stream.counter))
    rng_stream.counter += int(pos.size) * steps
    return (np.sort(out[status == 0] + lo), int((status == -1).sum()),
            int((status == 1).sum()))


def evolve_law(env: Environment, x0: int, t, window: tuple[int, int] | None = None) -> LawVector:
    """Exact law of X_t started at x0, by dynamic programming over the window."""
    lo, hi = window if window is not None else (env.lo, env.hi)
    if not (lo <= x0 <= hi):
        raise IndexError(f"start {x0} outside window [{lo}, {hi}]")
    alpha = _alpha_window(env, lo, hi)
    steps = _steps(t)
    p0 = np.zeros(hi - lo + 1)
    p0[x0 - lo] = 1.0
    probs, ll, lr = _forward(p0, alpha, steps, x0 - lo, x0 - lo)
    return LawVector(lo, hi, probs, x0, steps, float(ll), float(lr))


def occupation_probability(env: Environment, target: tuple[int, int], t,
                           window: tuple[int, int] | None = None) -> np.ndarray:
    """P_x[X_t in target] for every start x in ``window`` (absorbing edges).

    This is the adjoint of :func:`evolve_law`: one backward pass answers the
    question for all starting sites at once.
    """
    lo, hi = window if window is not None else (env.lo, env.hi)
    alpha = _alpha_window(env, lo, hi)
    h0 = np.zeros(hi - lo + 1)
    a, b = max(target[0], lo), min(target[1], hi)
    if a <= b:
        h0[a - lo:b - lo + 1] = 1.0
    return _backward(h0, alpha, _steps(t))


def mean_field(env: Environment, lam: float, t, window: tuple[int, int],
               initial: np.ndarray | None = None) -> MeanField:
    """Exact E[eta(x, t)] for a Poisson(lam) field started on ``window``."""
    if not lam > 0:
        raise ConfigError(f"lambda must be positive, got {lam}")
    lo, hi = window
    alpha = _alpha_window(env, lo, hi)
    m0 = np.full(hi - lo + 1, float(lam)) if initial is None else np.asarray(initial, float)
    means, ll, lr = _forward_full(m0, alpha, _steps(t))
    return MeanField(lo, hi, means, _steps(t), float(ll), float(lr))


def write_counts_csv(lo: int, values, path: str | Path, header=("index", "count")) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(list(header))
        for j, v in enumerate(values):
            w.writerow([lo + j, v if isinstance(v, (int, np.integer)) else format(float(v), ".17g")])
    return path
