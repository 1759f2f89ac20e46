"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 scan incomplete,
3 acceptance failure (``check``).
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import acceptance, experiments as ex, reports
from .config import distribution, load_config, parse_value
from .environment import ConfigError, Potential, compute_potential, sample_environment, write_env_csv
from .observables import empirical_laplace, nf_sample, nf_statistics, renewal_gap_sample
from .rng import derive_key
from .valleys import (GammaParams, ScanIncomplete, construct_cover, write_decomposition_csv,
                      write_decomposition_json)

EXIT_OK, EXIT_CONFIG, EXIT_SCAN, EXIT_CHECK = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON configuration file")
    p.add_argument("--seed", type=int, help="master seed (env.seed)")
    p.add_argument("--t", type=float, help="time horizon (sim.t)")
    p.add_argument("--trials", type=int, help="number of environments or trials (sim.trials)")
    p.add_argument("--out", type=Path, help="output directory (output.dir)")
    p.add_argument("--svg", action="store_true", help="also write SVG figures")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a dotted config key, e.g. sim.engine=per_particle")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sinaiwalk", description="Independent walks in a Sinai random environment.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("env", help="sample an environment and write env.csv")
    _common(p)
    p.add_argument("--radius", type=int, help="window [-radius, radius] (default: simulation window)")
    p = sub.add_parser("valleys", help="valley cover of the support of f")
    _common(p)
    p.add_argument("--gamma", type=float, help="valleys.gamma")
    p.add_argument("--K", type=float, help="valleys.K")
    p.add_argument("--dist", choices=["two_point_symmetric", "uniform_symmetric"], help="env.kind")
    p.add_argument("--rho0", type=float, help="env.rho0")
    p.add_argument("--Gamma", type=float, help="use this depth threshold instead of log t + gamma log log t")
    p.add_argument("--potential", type=Path, help="CSV with columns index,S to use instead of a sample")
    p = sub.add_parser("simulate", help="empirical vs predicted functional over sampled environments")
    _common(p)
    p = sub.add_parser("localize", help="exact localization masses per valley")
    _common(p)
    p = sub.add_parser("renewal", help="renewal statistics of Gamma-extrema")
    _common(p)
    p = sub.add_parser("check", help="run the acceptance criteria")
    _common(p)
    p.add_argument("--scale", choices=["quick", "full"], help="check.scale")
    p.add_argument("--criteria", type=str, help="comma-separated criterion numbers")
    return parser


def _overrides(args) -> dict:
    o = {}
    for key, name in (("env.seed", "seed"), ("sim.t", "t"), ("sim.trials", "trials"),
                      ("valleys.gamma", "gamma"), ("valleys.K", "K"), ("env.kind", "dist"),
                      ("env.rho0", "rho0"), ("check.scale", "scale")):
        v = getattr(args, name, None)
        if v is not None:
            o[key] = v
    if args.out is not None:
        o["output.dir"] = str(args.out)
    if getattr(args, "criteria", None):
        try:
            o["check.criteria"] = [int(c) for c in args.criteria.split(",") if c.strip()]
        except ValueError:
            raise ConfigError(f"bad --criteria {args.criteria!r}") from None
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        o[k.strip()] = parse_value(v)
    return o


def _outdir(cfg) -> Path:
    d = Path(cfg["output"]["dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# commands

def cmd_env(cfg, args) -> int:
    params = GammaParams(cfg["sim"]["t"], cfg["valleys"]["gamma"])
    R = args.radius if args.radius is not None else ex.window_radius(
        params, cfg["valleys"]["K"], cfg["sim"]["window_margin"])
    if R < 1:
        raise ConfigError("the environment window must have positive width")
    env = sample_environment(distribution(cfg), -R, R, cfg["env"]["seed"])
    path = write_env_csv(env, compute_potential(env), _outdir(cfg) / "env.csv")
    _log(f"wrote {path}")
    return EXIT_OK


def _read_potential(path: Path) -> Potential:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        idx = [int(r["index"]) for r in rows]
        S = [float(r["S"]) for r in rows]
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read potential {path}: {exc}") from None
    if not idx or idx != list(range(idx[0], idx[0] + len(idx))):
        raise ConfigError(f"potential {path} must list consecutive indices")
    return Potential.from_values(S, lo=idx[0])


def cmd_valleys(cfg, args) -> int:
    if args.Gamma is not None:
        if not args.Gamma > 0:
            raise ConfigError("--Gamma must be positive")
        params = GammaParams.from_gamma_t(args.Gamma)
    else:
        params = GammaParams(cfg["sim"]["t"], cfg["valleys"]["gamma"])
    K = cfg["valleys"]["K"]
    if args.potential is not None:
        P = _read_potential(args.potential)
    else:
        R = ex.window_radius(params, K, cfg["sim"]["window_margin"])
        P = compute_potential(sample_environment(distribution(cfg), -R, R, cfg["env"]["seed"]))
    d = construct_cover(P, params, K, chunk_factor=cfg["valleys"]["chunk_factor"],
                        cap_factor=cfg["valleys"]["cap_factor"])
    out = _outdir(cfg)
    doc = {"config": cfg, "decomposition": d.to_json_dict(),
           "n_plus": d.n_plus, "n_minus": d.n_minus, "truncated": d.truncated}
    reports.write_json(out / "valleys.json", doc)
    write_decomposition_csv(d, out / "valleys.csv")
    if args.svg:
        P = d.potential
        reports.potential_svg(out / "valleys.svg", P.lo, np.asarray(P.S), d.M, d.m, d.support_edge)
    _log(f"n_f = {d.n_f}, M = {d.M}, m = {d.m}")
    return EXIT_OK


def cmd_simulate(cfg, args) -> int:
    rows = ex.run_theorem1(cfg)
    summary = ex.summarize_theorem1(rows)
    out = _outdir(cfg)
    reports.write_json(out / "simulate.json", {"config": cfg, "theorem1": {**summary, "trials": rows}})
    header = ["trial", "t", "seed", "status", "n_f", "F_emp", "F_pred", "abs_err", "rel_err", "leaked"]
    reports.write_csv(out / "theorem1.csv", header, rows)
    _log(f"median |F_emp - F_pred| = {summary.get('abs_err')}")
    return EXIT_OK


def cmd_localize(cfg, args) -> int:
    rows = ex.run_localization(cfg)
    out = _outdir(cfg)
    reports.write_json(out / "localize.json", {"config": cfg, "localization": rows})
    table = [[r["trial"], v["valley_index"], v["bottom"], x, m]
             for r in rows if r["status"] == "ok" for v in r["valleys"]
             for x, m in zip(v["start_sites_tested"], v["mass_in_window"])]
    reports.write_csv(out / "localization.csv", ["trial", "valley", "bottom", "start", "mass"], table)
    return EXIT_OK


def cmd_renewal(cfg, args) -> int:
    r = cfg["renewal"]
    dist = distribution(cfg)
    sample = renewal_gap_sample(dist, r["Gamma"], r["n_envs"], r["target_extrema"],
                                derive_key(cfg["env"]["seed"], "renewal") >> 1)
    lap = empirical_laplace(sample, cfg["observables"]["lambdas"], n_boot=r["n_boot"],
                            seed=cfg["env"]["seed"])
    n, skipped = nf_sample(dist, GammaParams.from_gamma_t(r["Gamma"]), r["nf_K"], r["nf_envs"],
                           derive_key(cfg["env"]["seed"], "nf") >> 1)
    sample.n_f_samples, sample.supp_rescaled = n, 2.0 * r["nf_K"]
    nf = nf_statistics(sample, K=r["nf_K"])
    nf["skipped"] = skipped
    out = _outdir(cfg)
    reports.write_json(out / "renewal.json", {"config": cfg, "renewal": {
        "gaps_summary": sample.gaps_summary(), "laplace": lap, "nf": nf}})
    reports.write_csv(out / "gaps.csv", ["k", "gap"], enumerate(sample.gaps.tolist()))
    reports.write_csv(out / "laplace.csv",
                      ["lambda", "empirical", "paper_value", "alt_value", "ci_low", "ci_high"], lap)
    if args.svg and sample.gaps.size:
        reports.gaps_histogram_svg(out / "gaps.svg", sample.gaps)
    return EXIT_OK


def _check_report(cfg, results) -> dict:
    doc = {"config": cfg, "criteria": [r.to_json_dict() for r in results]}
    by = {r.number: r for r in results}
    if 5 in by:
        th = by[5].details["per_t"]
        last = th[max(th, key=float)]
        rows = [x for x in by[5].tables["theorem1"] if x["status"] == "ok"]
        tmax = max(x["t"] for x in rows) if rows else None
        last_rows = [x for x in rows if x["t"] == tmax]
        doc["theorem1"] = {"F_emp": [x["F_emp"] for x in last_rows],
                           "F_pred": [x["F_pred"] for x in last_rows],
                           "abs_err": [x["abs_err"] for x in last_rows],
                           "median_abs_err": last["median_abs_err"]}
    if 4 in by:
        doc["localization"] = by[4].tables["localization"]
    if 6 in by:
        doc["migration"] = {"summary": by[6].details, "trials": by[6].tables["migration"]}
    if 7 in by or 8 in by:
        doc["renewal"] = {}
        if 7 in by:
            doc["renewal"]["gaps_summary"] = by[7].details["gaps_summary"]
            doc["renewal"]["laplace"] = by[7].details["laplace"]
        if 8 in by:
            doc["renewal"]["nf"] = by[8].details["nf"]
    return doc


def _write_check(cfg, results, out: Path) -> list[Path]:
    paths = [reports.write_json(out / "check.json", _check_report(cfg, results))]
    paths.append(reports.write_csv(out / "criteria.csv", ["number", "name", "passed", "flagged"],
                                   [[r.number, r.name, r.passed, r.flagged] for r in results]))
    by = {r.number: r for r in results}
    if 7 in by:
        paths.append(reports.write_csv(out / "gaps.csv", ["k", "gap"],
                                       enumerate(by[7].tables["gaps"].tolist())))
    return paths


def cmd_check(cfg, args) -> int:
    wanted = set(cfg["check"]["criteria"])
    scale = cfg["check"]["scale"]
    out = _outdir(cfg)
    results = []
    for r in acceptance.run_criteria(cfg, wanted - {9}, scale):
        _log(r.line())
        results.append(r)
    paths = _write_check(cfg, results, out)
    if 9 in wanted:
        first = [p.read_bytes() for p in paths]
        again = acceptance.run_criteria(cfg, wanted - {9}, scale)
        second_dir = out / "rerun"
        second = [p.read_bytes() for p in _write_check(cfg, again, second_dir)]
        same = first == second
        res9 = acceptance.CriterionResult(9, same, {"files": [p.name for p in paths]})
        _log(res9.line())
        results.append(res9)
        _write_check(cfg, results, out)
    if args.svg and 7 in {r.number for r in results}:
        reports.gaps_histogram_svg(out / "gaps.svg", next(r for r in results if r.number == 7).tables["gaps"])
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


COMMANDS = {"env": cmd_env, "valleys": cmd_valleys, "simulate": cmd_simulate,
            "localize": cmd_localize, "renewal": cmd_renewal, "check": cmd_check}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.perf_counter()
    try:
        cfg = load_config(args.config, _overrides(args))
        code = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        _log(f"configuration error: {exc}")
        return EXIT_CONFIG
    except ScanIncomplete as exc:
        _log(f"scan incomplete: {exc}")
        return EXIT_SCAN
    except OSError as exc:
        _log(f"I/O error: {exc}")
        return EXIT_CONFIG
    _log(f"{args.command} finished in {time.perf_counter() - started:.1f} s")
    return code


if __name__ == "__main__":
    sys.exit(main())
