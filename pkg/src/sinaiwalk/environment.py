"""Random environments (alpha_i), their laws, and the associated random potential."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .rng import derive_key, uniforms_for_sites


class ConfigError(ValueError):
    """Invalid model or run configuration."""


class EnvKind(str, Enum):
    TWO_POINT = "two_point_symmetric"
    UNIFORM = "uniform_symmetric"


@dataclass(frozen=True)
class EnvDistribution:
    """Law of a single alpha_i.

    Only laws symmetric about 1/2 are offered, so ``E[log((1-a)/a)] = 0`` holds
    exactly.  ``rho0`` is the ellipticity bound: every alpha lies in
    ``[rho0, 1 - rho0]``.
    """

    kind: EnvKind = EnvKind.TWO_POINT
    rho0: float = 0.25

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", EnvKind(self.kind))
        except ValueError:
            raise ConfigError(f"unknown environment kind {self.kind!r}") from None
        if not (0.0 < self.rho0 < 0.5):
            raise ConfigError(f"rho0 must lie in (0, 1/2), got {self.rho0}")

    @property
    def eps_max(self) -> float:
        return math.log((1.0 - self.rho0) / self.rho0)

    def alpha_from_uniform(self, u: np.ndarray) -> np.ndarray:
        if self.kind is EnvKind.TWO_POINT:
            return np.where(u < 0.5, self.rho0, 1.0 - self.rho0)
        return self.rho0 + (1.0 - 2.0 * self.rho0) * u


@dataclass(frozen=True, eq=False)
class Environment:
    """alpha_i for i in [lo, hi]; ``alpha[j]`` is the value at site ``lo + j``."""

    lo: int
    hi: int
    alpha: np.ndarray
    dist: EnvDistribution
    master_seed: int
    _key: int = field(default=0, repr=False)

    def __post_init__(self):
        self.alpha.setflags(write=False)

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    def __len__(self) -> int:
        return self.hi - self.lo + 1

    def at(self, i: int) -> float:
        if not (self.lo <= i <= self.hi):
            raise IndexError(f"site {i} outside environment window [{self.lo}, {self.hi}]")
        return float(self.alpha[i - self.lo])

    @classmethod
    def from_alpha(cls, alpha, lo: int, dist: EnvDistribution | None = None,
                   validate: bool = True) -> "Environment":
        """Wrap a hand-written alpha sequence (fixtures and tests).

        ``validate=False`` skips the ellipticity check, which lets tests use
        degenerate sites such as alpha = 1.
        """
        alpha = np.array(alpha, dtype=np.float64)
        dist = dist or EnvDistribution()
        if validate and (np.any(alpha < dist.rho0) or np.any(alpha > 1.0 - dist.rho0)):
            raise ConfigError("alpha outside [rho0, 1 - rho0]")
        hi = lo + alpha.size - 1
        if not (lo <= 0 <= hi):
            raise ConfigError("window must contain the origin")
        return cls(lo, hi, alpha, dist, master_seed=-1, _key=-1)

    def equals(self, other: "Environment") -> bool:
        return (self.lo == other.lo and self.hi == other.hi and self.dist == other.dist
                and np.array_equal(self.alpha, other.alpha))


def _site_alpha(dist: EnvDistribution, key: int, lo: int, hi: int) -> np.ndarray:
    u = uniforms_for_sites(np.uint64(key), lo, hi - lo + 1)
    return dist.alpha_from_uniform(u)


def sample_environment(dist: EnvDistribution, lo: int, hi: int, master_seed: int) -> Environment:
    if hi < lo:
        raise ConfigError(f"empty window [{lo}, {hi}]")
    if not (lo <= 0 <= hi):
        raise ConfigError("window must contain the origin")
    key = derive_key(master_seed, "environment", dist.kind.value, dist.rho0)
    return Environment(lo, hi, _site_alpha(dist, key, lo, hi), dist, master_seed, key)


def extend_environment(env: Environment, new_lo: int, new_hi: int) -> Environment:
    """Widen ``env`` to ``[new_lo, new_hi]`` without touching existing sites."""
    if new_lo > env.lo or new_hi < env.hi:
        raise ConfigError("extend_environment cannot shrink the window")
    if new_lo == env.lo and new_hi == env.hi:
        return env
    if env._key == -1:
        raise ConfigError("hand-built environments cannot be extended")
    parts = []
    if new_lo < env.lo:
        parts.append(_site_alpha(env.dist, env._key, new_lo, env.lo - 1))
    parts.append(np.asarray(env.alpha))
    if new_hi > env.hi:
        parts.append(_site_alpha(env.dist, env._key, env.hi + 1, new_hi))
    return Environment(new_lo, new_hi, np.concatenate(parts), env.dist, env.master_seed, env._key)


@dataclass(frozen=True, eq=False)
class Potential:
    """Integer-node potential S[k], k in [lo, hi], with S[0] = 0."""

    lo: int
    hi: int
    S: np.ndarray
    sigma2: float
    env: Environment | None = field(default=None, repr=False)

    def __post_init__(self):
        self.S.setflags(write=False)

    def __call__(self, k):
        return self.S[np.asarray(k) - self.lo]

    def check_range(self, *idx: int) -> None:
        for k in idx:
            if not (self.lo <= k <= self.hi):
                raise IndexError(f"index {k} outside potential window [{self.lo}, {self.hi}]")

    @classmethod
    def from_values(cls, values, lo: int, sigma2: float = 1.0) -> "Potential":
        S = np.array(values, dtype=np.float64)
        if not (lo <= 0 <= lo + S.size - 1) or S[-lo] != 0.0:
            raise ConfigError("potential must contain the origin with S[0] = 0")
        return cls(lo, lo + S.size - 1, S, float(sigma2))


def _signed_partial_sums(eps: np.ndarray, z: int) -> np.ndarray:
    # S_k = sum_{1<=i<=k} eps_i for k > 0, S_k = -sum_{k+1<=i<=0} eps_i for k < 0
    S = np.zeros_like(eps)
    S[z + 1:] = np.cumsum(eps[z + 1:])
    if z > 0:
        S[:z] = -np.cumsum(eps[1:z + 1][::-1])[::-1]
    return S


def compute_potential(env: Environment) -> Potential:
    """Potential on env's window.

    For the two-point law the potential lives on the lattice c * Z (c = log 3 by
    default); it is computed as c times an integer walk so equal heights are
    bit-identical, which keeps tie-breaking exact.
    """
    z = -env.lo
    c = env.dist.eps_max
    eps = np.log((1.0 - env.alpha) / env.alpha)
    signs = np.rint(eps / c) if c > 0 else None
    if (env.dist.kind is EnvKind.TWO_POINT and signs is not None
            and np.array_equal(np.abs(signs), np.ones_like(signs))
            and np.allclose(signs * c, eps, rtol=0, atol=1e-12)):
        S = c * _signed_partial_sums(signs, z)
    else:
        S = _signed_partial_sums(eps, z)
    return Potential(env.lo, env.hi, S, sigma2_analytic(env.dist), env)


def sigma2_analytic(dist: EnvDistribution) -> float:
    """Exact Var[log((1-alpha)/alpha)] under ``dist`` (the mean is zero by symmetry)."""
    c = dist.eps_max
    if dist.kind is EnvKind.TWO_POINT:
        return c * c
    # substitute x = log((1-a)/a): da = dx / (4 cosh^2(x/2)), x in [-c, c]
    nodes, weights = np.polynomial.legendre.leggauss(200)
    x = c * nodes
    integrand = x * x / (4.0 * np.cosh(0.5 * x) ** 2)
    return float(c * np.dot(weights, integrand) / (1.0 - 2.0 * dist.rho0))


@dataclass(frozen=True)
class HypothesisReport:
    mean_eps: float
    sigma2: float
    rho0: float
    ok: bool


def verify_hypotheses(dist: EnvDistribution) -> HypothesisReport:
    """Report zero-mean, positive-variance and ellipticity for ``dist``."""
    sigma2 = sigma2_analytic(dist)
    mean_eps = 0.0  # exact: the law of alpha is symmetric about 1/2
    lower = dist.rho0  # ess inf of alpha
    upper = 1.0 - dist.rho0  # ess sup of alpha
    ok = mean_eps == 0.0 and sigma2 > 0.0 and lower >= dist.rho0 and upper <= 1.0 - dist.rho0
    return HypothesisReport(mean_eps, sigma2, dist.rho0, ok)


def write_env_csv(env: Environment, pot: Potential, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["index", "alpha", "S"])
        for j, i in enumerate(range(env.lo, env.hi + 1)):
            w.writerow([i, format(env.alpha[j], ".17g"), format(pot.S[i - pot.lo], ".17g")])
    return path
