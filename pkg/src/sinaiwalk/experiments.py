"""Batch drivers: every trial is a pure function of (config, trial id)."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import distribution, function_spec
from .environment import (EnvDistribution, Environment, compute_potential, extend_environment,
                          sample_environment)
from .observables import (empirical_functional, expected_migration, localize, migration_report,
                          predicted_functional, split_by_origin)
from .particles import evolve_field, init_field, mean_field
from .rng import RngStream, derive_key
from .valleys import GammaParams, ScanIncomplete, ValleyDecomposition, construct_cover


def trial_seed(master_seed: int, trial: int) -> int:
    return derive_key(master_seed, "trial", int(trial)) >> 1


def window_radius(params: GammaParams, K: float, margin: int) -> int:
    """R = ceil(K (log t)^2 + log2(t) (log t)^2) + margin."""
    return int(math.ceil(K * params.scale + params.log2_t * params.scale)) + int(margin)


def parallel_map(fn, items, workers: int = 1) -> list:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def environment_and_cover(dist: EnvDistribution, params: GammaParams, K: float, seed: int,
                          margin: int, chunk_factor: float = 4.0,
                          cap_factor: float = 512.0) -> tuple[Environment, ValleyDecomposition, tuple[int, int]]:
    """Sampled environment, its cover, and the simulation window containing V_f."""
    R = window_radius(params, K, margin)
    env = sample_environment(dist, -R, R, seed)
    d = construct_cover(compute_potential(env), params, K,
                        chunk_factor=chunk_factor, cap_factor=cap_factor)
    lo, hi = -R, R
    if d.n_f:
        lo, hi = min(lo, d.M[0] - margin), max(hi, d.M[-1] + margin)
    env = d.potential.env
    env = extend_environment(env, min(lo, env.lo), max(hi, env.hi))
    return env, d, (lo, hi)


def _params(cfg: dict, t: float) -> GammaParams:
    return GammaParams(float(t), float(cfg["valleys"]["gamma"]))


def _cover_kwargs(cfg: dict) -> dict:
    v = cfg["valleys"]
    return {"chunk_factor": v["chunk_factor"], "cap_factor": v["cap_factor"]}


def theorem1_trial(args) -> dict:
    """Empirical against predicted functional for one sampled environment."""
    cfg, t, trial = args
    seed = trial_seed(cfg["env"]["seed"], trial)
    row = {"trial": int(trial), "t": float(t), "seed": seed}
    lam = float(cfg["sim"]["lambda"])
    f = function_spec(cfg)
    try:
        env, d, (lo, hi) = environment_and_cover(
            distribution(cfg), _params(cfg, t), cfg["valleys"]["K"], seed,
            cfg["sim"]["window_margin"], **_cover_kwargs(cfg))
    except ScanIncomplete as exc:
        row.update(status="scan_incomplete", error=str(exc))
        return row
    field = init_field(lam, lo, hi, seed)
    stream = RngStream.for_trial(seed, "theorem1", float(t))
    field = evolve_field(field, env, t, stream, engine=cfg["sim"]["engine"])
    F_emp = empirical_functional(field, f, t)
    F_pred = predicted_functional(d, f, lam, t)
    err = abs(F_emp - F_pred)
    row.update(status="ok", n_f=d.n_f, case_At=d.case_At, window=[lo, hi],
               F_emp=F_emp, F_pred=F_pred, abs_err=err,
               rel_err=err / F_pred if F_pred > 0 else None,
               leaked=field.leaked_left + field.leaked_right)
    return row


def run_theorem1(cfg: dict, t: float | None = None, trials: int | None = None) -> list[dict]:
    t = float(cfg["sim"]["t"] if t is None else t)
    n = int(cfg["sim"]["trials"] if trials is None else trials)
    rows = parallel_map(theorem1_trial, [(cfg, t, e) for e in range(n)], cfg["sim"]["workers"])
    return sorted(rows, key=lambda r: r["trial"])


def summarize_theorem1(rows: list[dict]) -> dict:
    ok = [r for r in rows if r["status"] == "ok"]
    err = np.array([r["abs_err"] for r in ok])
    out = {"n_trials": len(rows), "n_ok": len(ok),
           "n_failed": len(rows) - len(ok)}
    if ok:
        q = np.quantile(err, [0.1, 0.5, 0.9])
        out.update(F_emp=float(np.mean([r["F_emp"] for r in ok])),
                   F_pred=float(np.mean([r["F_pred"] for r in ok])),
                   abs_err=float(q[1]), abs_err_q10=float(q[0]), abs_err_q90=float(q[2]))
    return out


def localization_trial(args) -> dict:
    cfg, t, trial = args
    seed = trial_seed(cfg["env"]["seed"], trial)
    row = {"trial": int(trial), "t": float(t), "seed": seed}
    try:
        env, d, _ = environment_and_cover(distribution(cfg), _params(cfg, t), cfg["valleys"]["K"],
                                          seed, cfg["sim"]["window_margin"], **_cover_kwargs(cfg))
    except ScanIncomplete as exc:
        row.update(status="scan_incomplete", error=str(exc))
        return row
    o = cfg["observables"]
    rep = localize(env, d, t, o["cte"], o["n_starts"], seed)
    row.update(status="ok", n_f=d.n_f, valleys=rep.to_json_dict())
    return row


def run_localization(cfg: dict, t: float | None = None, trials: int | None = None) -> list[dict]:
    t = float(cfg["sim"]["t"] if t is None else t)
    n = int(cfg["sim"]["trials"] if trials is None else trials)
    rows = parallel_map(localization_trial, [(cfg, t, e) for e in range(n)], cfg["sim"]["workers"])
    return sorted(rows, key=lambda r: r["trial"])


def migration_trial(args) -> dict:
    """Origin-tagged fields: one per valley (without U), one for U, one outside V_f."""
    cfg, t, trial, exact = args
    seed = trial_seed(cfg["env"]["seed"], trial)
    row = {"trial": int(trial), "t": float(t), "seed": seed}
    lam = float(cfg["sim"]["lambda"])
    try:
        env, d, (lo, hi) = environment_and_cover(
            distribution(cfg), _params(cfg, t), cfg["valleys"]["K"], seed,
            cfg["sim"]["window_margin"], **_cover_kwargs(cfg))
    except ScanIncomplete as exc:
        row.update(status="scan_incomplete", error=str(exc))
        return row
    if d.n_f == 0:
        row.update(status="ok", n_f=0, report=None)
        return row
    start = split_by_origin(init_field(lam, lo, hi, seed), d)
    final = [evolve_field(fl, env, t, RngStream.for_trial(seed, "migration", float(t),
                                                          str(fl.origin_label)),
                          engine=cfg["sim"]["engine"]) for fl in start]
    rep = migration_report(final, d, initial=start)
    row.update(status="ok", n_f=d.n_f, report=rep.to_json_dict(),
               conservation_defect=rep.conservation_defect())
    if exact:
        row["expected"] = expected_migration(env, d, lam, t, (lo, hi)).to_json_dict()
    return row


def run_migration(cfg: dict, t: float | None = None, trials: int | None = None,
                  exact: bool = True) -> list[dict]:
    t = float(cfg["sim"]["t"] if t is None else t)
    n = int(cfg["sim"]["trials"] if trials is None else trials)
    rows = parallel_map(migration_trial, [(cfg, t, e, exact) for e in range(n)],
                        cfg["sim"]["workers"])
    return sorted(rows, key=lambda r: r["trial"])


def engine_moments(env: Environment, lam: float, t: float, trials: int, seed: int,
                   engine: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-site sample mean and variance of eta(., t) over independent trials."""
    s1 = np.zeros(len(env))
    s2 = np.zeros(len(env))
    for k in range(trials):
        ts = trial_seed(seed, k)
        fl = init_field(lam, env.lo, env.hi, ts)
        fl = evolve_field(fl, env, t, RngStream.for_trial(ts, "engine", engine), engine=engine)
        c = fl.counts.astype(np.float64)
        s1 += c
        s2 += c * c
    mean = s1 / trials
    var = (s2 - trials * mean * mean) / (trials - 1)
    return mean, var


def engine_equivalence(env: Environment, lam: float, t: float, trials: int, seed: int,
                       engine: str) -> dict:
    """Monte Carlo moments of one engine against the exact mean field."""
    mean, var = engine_moments(env, lam, t, trials, seed, engine)
    mf = mean_field(env, lam, t, (env.lo, env.hi)).means
    # a site empty in every trial has zero sample variance; fall back to the
    # Poisson standard error sqrt(mf / trials) that holds under the oracle
    se = np.sqrt(np.where(var > 0, var, mf) / trials)
    diff = mean - mf
    z = np.divide(diff, se, out=np.zeros_like(diff), where=se > 0)
    heavy = mf >= 1.0
    fano = var[heavy] / mean[heavy]
    return {"engine": engine, "trials": trials, "sites": int(mean.size),
            "z": z, "fano": fano, "mean": mean, "var": var, "mean_field": mf}
