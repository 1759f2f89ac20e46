"""Observables: the occupation functional and its valley prediction, localization,
migration between valleys, and renewal statistics of the Gamma-extrema."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import stats

from .environment import (ConfigError, EnvDistribution, Environment, compute_potential,
                          extend_environment, sample_environment, sigma2_analytic)
from .particles import LawVector, MeanField, ParticleField, occupation_probability
from .rng import derive_key
from .valleys import (TIE_TOL, ContractError, GammaParams, ScanIncomplete, ValleyDecomposition,
                      _alternating_scan, construct_cover)


class FunctionKind(str, Enum):
    TRIANGLE = "triangle_bump"
    SMOOTH = "smooth_bump"
    ZERO = "zero"


@dataclass(frozen=True)
class FunctionSpec:
    """Test function f supported on [-K, K]."""

    kind: FunctionKind = FunctionKind.TRIANGLE
    K: float = 5.0
    amplitude: float = 1.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", FunctionKind(self.kind))
        except ValueError:
            raise ConfigError(f"unknown function kind {self.kind!r}") from None
        if not self.K > 0:
            raise ConfigError(f"K must be positive, got {self.K}")

    def __call__(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.kind is FunctionKind.ZERO:
            return np.zeros_like(u)
        r = np.abs(u) / self.K
        if self.kind is FunctionKind.TRIANGLE:
            return self.amplitude * np.maximum(0.0, 1.0 - r)
        out = np.zeros_like(u)
        inside = r < 1.0
        out[inside] = self.amplitude * np.exp(-1.0 / (1.0 - r[inside] ** 2))
        return out


def _scale(t: float) -> float:
    return math.log(t) ** 2


def _weighted_sum(lo: int, values: np.ndarray, f: FunctionSpec, scale: float) -> float:
    x = np.arange(lo, lo + values.size, dtype=np.float64)
    return float(np.dot(values, f(x / scale)) / scale)


def empirical_functional(field: ParticleField, f: FunctionSpec, t: float) -> float:
    """(1/(log t)^2) * sum_x eta(x, t) f(x/(log t)^2)."""
    return _weighted_sum(field.lo, field.counts.astype(np.float64), f, _scale(t))


def expected_functional(mf: MeanField, f: FunctionSpec, t: float) -> float:
    """Exact expectation of :func:`empirical_functional` given the environment."""
    return _weighted_sum(mf.lo, mf.means, f, _scale(t))


def predicted_functional(d: ValleyDecomposition, f: FunctionSpec, lam: float, t: float) -> float:
    """lam * sum_i |M_{i+1} - M_i| f(m_i/(log t)^2) / (log t)^2 over the n_f valleys."""
    scale = _scale(t)
    if d.n_f == 0:
        return 0.0
    widths = np.abs(np.diff(np.asarray(d.M[:d.n_f + 1], dtype=np.float64)))
    heights = f(np.asarray(d.m[:d.n_f], dtype=np.float64) / scale)
    return float(lam * np.dot(widths, heights) / scale)


# ---------------------------------------------------------------------------
# localization

def localization_halfwidth(t: float, cte: float) -> float:
    return cte * math.log(t) ** 1.5


def localization_mass(law: LawVector, m_i: int, t: float, cte: float) -> float:
    """Mass of ``law`` on {x : |x - m_i| <= cte (log t)^{3/2}}."""
    h = localization_halfwidth(t, cte)
    x = np.arange(law.lo, law.hi + 1)
    return float(law.probs[np.abs(x - m_i) <= h].sum())


@dataclass(frozen=True)
class ValleyLocalization:
    valley_index: int
    bottom: int
    start_sites_tested: list[int]
    mass_in_window: list[float]
    cte: float
    window: tuple[int, int]

    @property
    def bottom_mass(self) -> float:
        return self.mass_in_window[0]

    def to_json_dict(self) -> dict:
        return {"valley_index": self.valley_index, "bottom": self.bottom,
                "start_sites_tested": list(self.start_sites_tested),
                "mass_in_window": [float(v) for v in self.mass_in_window],
                "cte": self.cte, "window": list(self.window)}


@dataclass
class LocalizationReport:
    valleys: list[ValleyLocalization]
    t: float
    cte: float

    @property
    def bottom_masses(self) -> np.ndarray:
        return np.array([v.bottom_mass for v in self.valleys])

    @property
    def sampled_masses(self) -> np.ndarray:
        out = [m for v in self.valleys for m in v.mass_in_window[1:]]
        return np.array(out, dtype=np.float64)

    def to_json_dict(self) -> list:
        return [v.to_json_dict() for v in self.valleys]


def _allowed_starts(d: ValleyDecomposition, i: int) -> np.ndarray:
    a, b = d.M[i], d.M[i + 1]
    x = np.arange(a, b + 1)
    keep = np.ones(x.size, dtype=bool)
    for ua, ub in d.U:
        keep &= (x < ua) | (x > ub)
    return x[keep]


def localize(env: Environment, d: ValleyDecomposition, t: float, cte: float = 1.0,
             n_starts: int = 10, seed: int = 0, pad: int | None = None) -> LocalizationReport:
    """Exact in-window mass after time t from each valley bottom and sampled starts.

    For valley i one backward pass computes P_x[|X_t - m_i| <= cte (log t)^{3/2}]
    for every start x at once; this equals the evolve_law mass from x on the
    same window.  The window [M_i - pad, M_{i+1} + pad] has absorbing edges
    (pad defaults to (log t)^2), so the masses are lower bounds for the walk on Z.
    """
    pad = int(math.ceil(_scale(t))) if pad is None else int(pad)
    half = localization_halfwidth(t, cte)
    out = []
    for i in range(d.n_f):
        lo, hi = d.M[i] - pad, d.M[i + 1] + pad
        env = extend_environment(env, min(env.lo, lo), max(env.hi, hi))
        mi = d.m[i]
        target = (int(math.ceil(mi - half)), int(math.floor(mi + half)))
        h = occupation_probability(env, target, t, (lo, hi))
        pool = _allowed_starts(d, i)
        rng = np.random.default_rng(derive_key(seed, "localization-starts", i))
        picks = rng.choice(pool, size=min(n_starts, pool.size), replace=False) if pool.size else []
        starts = [mi] + sorted(int(x) for x in picks)
        out.append(ValleyLocalization(i, mi, starts, [float(h[x - lo]) for x in starts],
                                      cte, (lo, hi)))
    return LocalizationReport(out, t, cte)


# ---------------------------------------------------------------------------
# migration

U_TAG = "U"
OUTSIDE_TAG = "outside"


def origin_labels(d: ValleyDecomposition, lo: int, hi: int) -> np.ndarray:
    """Origin tag per site of [lo, hi]: valley index, -1 for U-points, -2 outside V_f."""
    x = np.arange(lo, hi + 1)
    lab = np.full(x.size, -2, dtype=np.int64)
    for i in range(d.n_f):
        lab[(x >= d.M[i]) & (x <= d.M[i + 1])] = i
    for ua, ub in d.U:
        lab[(x >= ua) & (x <= ub)] = -1
    return lab


def _tag_name(code: int):
    return {-1: U_TAG, -2: OUTSIDE_TAG}.get(int(code), int(code))


def split_by_origin(field: ParticleField, d: ValleyDecomposition) -> list[ParticleField]:
    """One field per origin region: valleys 0..n_f-1 (minus U), U-points, outside V_f."""
    lab = origin_labels(d, field.lo, field.hi)
    out = []
    for code in list(range(d.n_f)) + [-1, -2]:
        counts = np.where(lab == code, field.counts, 0)
        out.append(ParticleField(field.lo, field.hi, counts, _tag_name(code), field.elapsed))
    return out


def destination_bins(d: ValleyDecomposition, lo: int, hi: int) -> np.ndarray:
    """Valley index owning each site at time t (half-open [M_j, M_{j+1})), -2 outside V_f."""
    x = np.arange(lo, hi + 1)
    dest = np.full(x.size, -2, dtype=np.int64)
    for j in range(d.n_f):
        right = d.M[j + 1] if j < d.n_f - 1 else d.M[j + 1] + 1
        dest[(x >= d.M[j]) & (x < right)] = j
    return dest


@dataclass
class MigrationReport:
    cross_valley: np.ndarray
    origin_mass: np.ndarray
    escaped_mass: np.ndarray
    influx_from_outside: float
    indeterminate_mass: float
    outside_mass: float

    @property
    def cross_fraction(self) -> float:
        """Share of valley-origin mass found outside its own valley."""
        total = float(self.origin_mass.sum())
        if total == 0.0:
            return 0.0
        return float((total - np.trace(self.cross_valley)) / total)

    def conservation_defect(self) -> float:
        rows = self.cross_valley.sum(axis=1) + self.escaped_mass
        return float(np.max(np.abs(rows - self.origin_mass), initial=0.0))

    def to_json_dict(self) -> dict:
        return {"cross_valley": self.cross_valley.tolist(),
                "origin_mass": self.origin_mass.tolist(),
                "escaped_mass": self.escaped_mass.tolist(),
                "cross_fraction": self.cross_fraction,
                "influx_from_outside": self.influx_from_outside,
                "indeterminate_mass": self.indeterminate_mass,
                "outside_mass": self.outside_mass}


def migration_report(tagged_fields: list[ParticleField], d: ValleyDecomposition,
                     initial: list[ParticleField] | None = None) -> MigrationReport:
    """Cross-valley transfer from origin-tagged fields evolved to a common time.

    ``initial`` (the tagged fields at time 0) supplies the originating masses;
    without it they are recovered from conservation (final counts plus leaks).
    ``escaped_mass`` counts valley-origin particles found outside V_f or leaked.
    """
    labels = [fl.origin_label for fl in tagged_fields]
    expected = list(range(d.n_f)) + [U_TAG, OUTSIDE_TAG]
    if sorted(map(str, labels)) != sorted(map(str, expected)) or len(labels) != len(expected):
        raise ContractError(f"tags {labels} do not match the decomposition's {expected}")
    lo, hi = tagged_fields[0].lo, tagged_fields[0].hi
    if any(fl.lo != lo or fl.hi != hi for fl in tagged_fields):
        raise ContractError("tagged fields live on different windows")
    if len({fl.elapsed for fl in tagged_fields}) != 1:
        raise ContractError("tagged fields were evolved to different times")
    dest = destination_bins(d, lo, hi)
    start = {fl.origin_label: fl for fl in (initial or [])}
    n = d.n_f
    cross = np.zeros((n, n))
    origin = np.zeros(n)
    escaped = np.zeros(n)
    influx = indet = outside = 0.0
    for fl in tagged_fields:
        per_bin = np.bincount(dest + 2, weights=fl.counts, minlength=n + 2)
        in_vf = float(per_bin[2:].sum())
        if fl.origin_label == OUTSIDE_TAG:
            influx = in_vf
            outside = float(start[OUTSIDE_TAG].total) if OUTSIDE_TAG in start else float(fl.conserved_total)
        elif fl.origin_label == U_TAG:
            indet = float(start[U_TAG].total) if U_TAG in start else float(fl.conserved_total)
        else:
            i = int(fl.origin_label)
            cross[i] = per_bin[2:]
            origin[i] = float(start[i].total) if i in start else float(fl.conserved_total)
            escaped[i] = per_bin[0] + fl.leaked_left + fl.leaked_right
    return MigrationReport(cross, origin, escaped, influx, indet, outside)


def expected_migration(env: Environment, d: ValleyDecomposition, lam: float, t: float,
                       window: tuple[int, int]) -> MigrationReport:
    """Exact expectation of :func:`migration_report` for a Poisson(lam) start on ``window``."""
    lo, hi = window
    lab = origin_labels(d, lo, hi)
    n = d.n_f
    # h[j][x] = P_x[X_t in destination bin j]
    h = []
    for j in range(n):
        right = d.M[j + 1] - 1 if j < n - 1 else d.M[j + 1]
        h.append(occupation_probability(env, (d.M[j], right), t, window))
    h = np.array(h) if n else np.zeros((0, hi - lo + 1))
    cross = np.zeros((n, n))
    origin = np.zeros(n)
    for i in range(n):
        sel = lab == i
        origin[i] = lam * sel.sum()
        cross[i] = lam * h[:, sel].sum(axis=1)
    escaped = origin - cross.sum(axis=1)
    in_vf = h.sum(axis=0)
    influx = float(lam * in_vf[lab == -2].sum())
    return MigrationReport(cross, origin, escaped, influx,
                           float(lam * (lab == -1).sum()), float(lam * (lab == -2).sum()))


# ---------------------------------------------------------------------------
# renewal statistics of Gamma-extrema

@dataclass
class RenewalSample:
    gaps: np.ndarray  # rescaled max-to-max gaps, sigma^2 * gap / Gamma^2
    sigma2: float
    Gamma: float
    min_gaps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    spacings: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lag_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    n_f_samples: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    supp_rescaled: float = 0.0
    skipped: int = 0
    n_envs: int = 0

    def gaps_summary(self) -> dict:
        g = self.gaps
        out = {"n_gaps": int(g.size), "n_envs": self.n_envs, "skipped": self.skipped,
               "Gamma": self.Gamma, "sigma2": self.sigma2}
        if g.size:
            out.update(mean=float(g.mean()), sd=float(g.std(ddof=1)) if g.size > 1 else 0.0,
                       min=float(g.min()), max=float(g.max()),
                       lag1_autocorr=lag1_autocorrelation(self.lag_pairs))
        if self.min_gaps.size:
            out["min_gap_mean"] = float(self.min_gaps.mean())
        if self.spacings.size:
            out["spacing_mean"] = float(self.spacings.mean())
        return out


def lag1_autocorrelation(pairs: np.ndarray) -> float:
    """Correlation of (gap_k, gap_{k+1}) pairs taken within single environments."""
    if len(pairs) < 3:
        return float("nan")
    return float(np.corrcoef(pairs[:, 0], pairs[:, 1])[0, 1])


def _extrema_positions(dist: EnvDistribution, Gamma: float, target: int, seed: int,
                       length: int, max_length: int):
    while True:
        env = sample_environment(dist, 0, length, seed)
        S = compute_potential(env).S
        _, pos, kind, _ = _alternating_scan(S, 0, 1, float(Gamma), TIE_TOL, 0, math.inf, False)
        # the first commit depends on the arbitrary starting point; drop it
        pos, kind = pos[1:], kind[1:]
        if pos.size >= target:
            # a fixed count, not a fixed window, keeps the gaps free of length bias
            return pos[:target], kind[:target]
        if length >= max_length:
            return None
        length = min(2 * length, max_length)


def renewal_gap_sample(dist: EnvDistribution, Gamma: float, n_envs: int, target_extrema: int,
                       seed: int) -> RenewalSample:
    """Rescaled gaps between successive Gamma-maxima over ``n_envs`` environments.

    Each environment is scanned rightwards from the origin until
    ``target_extrema`` extrema are committed.  Environments that fall short even
    after the window has been grown 64-fold are skipped and counted.
    """
    if n_envs < 1 or target_extrema < 3:
        raise ConfigError("need n_envs >= 1 and target_extrema >= 3")
    sigma2 = sigma2_analytic(dist)
    unit = Gamma * Gamma / sigma2
    length = int(math.ceil(1.5 * (target_extrema + 2) * unit))
    gaps, min_gaps, spacings, pairs = [], [], [], []
    skipped = 0
    for e in range(n_envs):
        found = _extrema_positions(dist, Gamma, target_extrema,
                                   derive_key(seed, "renewal", e), length, 64 * length)
        if found is None:
            skipped += 1
            continue
        pos, kind = found
        g = np.diff(pos[kind == 1]) / unit
        gaps.append(g)
        min_gaps.append(np.diff(pos[kind == 0]) / unit)
        spacings.append(np.diff(pos) / unit)
        if g.size >= 2:
            pairs.append(np.column_stack([g[:-1], g[1:]]))
    cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0)
    return RenewalSample(cat(gaps), sigma2, float(Gamma), cat(min_gaps), cat(spacings),
                         np.vstack(pairs) if pairs else np.zeros((0, 2)),
                         skipped=skipped, n_envs=n_envs)


def laplace_cosh2(lam: float) -> float:
    return 1.0 / math.cosh(math.sqrt(2.0 * lam)) ** 2


def laplace_cosh(lam: float) -> float:
    return 1.0 / math.cosh(math.sqrt(2.0 * lam))


def empirical_laplace(sample: RenewalSample, lambdas, n_boot: int = 400, seed: int = 0,
                      level: float = 0.95) -> list[dict]:
    """Mean of exp(-lam * gap) with a percentile bootstrap interval.

    ``paper_value`` is 1/cosh^2(sqrt(2 lam)); ``alt_value`` is 1/cosh(sqrt(2 lam)).
    """
    g = np.asarray(sample.gaps, dtype=np.float64)
    if g.size == 0:
        raise ValueError("empty renewal sample")
    rng = np.random.default_rng(derive_key(seed, "laplace-bootstrap"))
    idx = rng.integers(0, g.size, size=(n_boot, g.size)) if n_boot else None
    q = (1.0 - level) / 2.0
    rows = []
    for lam in lambdas:
        lam = float(lam)
        w = np.exp(-lam * g)
        emp = float(w.mean())
        row = {"lambda": lam, "empirical": emp, "paper_value": laplace_cosh2(lam),
               "alt_value": laplace_cosh(lam)}
        if idx is not None:
            boot = w[idx].mean(axis=1)
            row["ci_low"], row["ci_high"] = (float(v) for v in np.quantile(boot, [q, 1.0 - q]))
        rows.append(row)
    return rows


# candidate meanings of supp(f) for f supported on [-K, K] (x measured in units of (log t)^2)
SUPP_CONVENTIONS = {
    "length_2K": lambda K, s2: 2.0 * K,
    "half_length_K": lambda K, s2: K,
    "sigma2_rescaled_2K": lambda K, s2: 2.0 * K * s2,
}


def nf_sample(dist: EnvDistribution, params: GammaParams, K: float, n_envs: int,
              seed: int) -> tuple[np.ndarray, int]:
    """n_f from construct_cover over ``n_envs`` seeded environments (skips counted)."""
    edge = int(math.ceil(K * params.scale))
    pad = int(math.ceil(4 * params.scale))
    out, skipped = [], 0
    for e in range(n_envs):
        env = sample_environment(dist, -edge - pad, edge + pad, derive_key(seed, "nf", e))
        try:
            d = construct_cover(compute_potential(env), params, K)
        except ScanIncomplete:
            skipped += 1
            continue
        out.append(d.n_f)
    return np.array(out, dtype=np.int64), skipped


def nf_statistics(sample: RenewalSample, K: float | None = None) -> dict:
    """n(f) mean/variance against sigma^2 supp/2 and the two candidate variance laws.

    The unit convention for supp is the candidate whose predicted mean lies
    closest to the empirical mean; it is reported, not assumed.
    """
    n = np.asarray(sample.n_f_samples, dtype=np.float64)
    if n.size < 2:
        raise ValueError("need at least two n_f samples")
    K = sample.supp_rescaled / 2.0 if K is None else K
    s2 = sample.sigma2
    mean_emp, var_emp = float(n.mean()), float(n.var(ddof=1))
    candidates = {}
    for name, conv in SUPP_CONVENTIONS.items():
        supp = conv(K, s2)
        mean_paper = s2 * supp / 2.0
        candidates[name] = {
            "supp": supp,
            "mean_paper": mean_paper,
            "mean_rel_err": abs(mean_emp - mean_paper) / mean_paper,
            "var_paper": 3.0 * s2 * s2 * supp / 4.0,
            "var_renewal": s2 * supp / 6.0,
        }
    best = min(candidates, key=lambda k: candidates[k]["mean_rel_err"])
    c = candidates[best]
    normal = stats.normaltest(n) if n.size >= 20 else None
    return {
        "n": int(n.size),
        "mean_emp": mean_emp,
        "var_emp": var_emp,
        "convention": best,
        "supp": c["supp"],
        "mean_paper": c["mean_paper"],
        "mean_rel_err": c["mean_rel_err"],
        "var_paper": c["var_paper"],
        "var_ratio_paper": var_emp / c["var_paper"],
        "var_renewal": c["var_renewal"],
        "var_ratio_renewal": var_emp / c["var_renewal"],
        "normaltest_pvalue": float(normal.pvalue) if normal is not None else None,
        "candidates": candidates,
    }
