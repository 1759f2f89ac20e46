import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sinaiwalk.environment import (EnvDistribution, Environment, Potential, compute_potential,
                                   sample_environment)
from sinaiwalk.valleys import (ContractError, GammaParams, MarkerKind, ScanIncomplete, Valley,
                               brute_force_extrema, check_good_environment, construct_cover, depth,
                               gamma_extrema_scan, indeterminate_sets, is_valley, refine_left,
                               refine_right, resolved_extrema, write_decomposition_csv,
                               write_decomposition_json)

W_VALUES = [0, 2, 3, 1, 2, 0, 1, -1, -2, 0, 1, 3, 2, 4, 1]


@pytest.fixture
def W():
    return Potential.from_values(W_VALUES, lo=-5)


@pytest.fixture
def G3():
    return GammaParams.from_gamma_t(3.0)


def flat(n=41):
    return Potential.from_values([0.0] * n, lo=-(n // 2))


def sampled(seed, r=500, kind="two_point_symmetric"):
    return compute_potential(sample_environment(EnvDistribution(kind, 0.25), -r, r, seed))


# ---------------------------------------------------------------- depth, valleys, refinement

def test_depth_examples(W):
    assert depth(W, -3, 3, 8) == 5
    assert depth(W, 2, 2, 2) == 0
    assert depth(flat(), -3, 0, 4) == 0
    with pytest.raises(IndexError):
        depth(W, -6, 3, 8)


def test_is_valley_examples(W):
    assert is_valley(W, -3, 3, 8)
    assert not is_valley(W, -3, 0, 8)
    assert is_valley(flat(), -5, 1, 9)


def test_refinement_examples(W):
    r = refine_right(W, Valley(-3, 3, 8))
    assert (r["M1"], r["m1"], r["drop"]) == (6, 7, 1.0)
    left = refine_left(W, Valley(-3, 3, 8))
    assert left["drop"] == 1.0
    assert refine_right(flat(), Valley(-5, 0, 5))["drop"] == 0.0
    with pytest.raises(ContractError):
        refine_right(W, Valley(-3, 0, 8))


def test_refinement_of_monotone_rise_is_degenerate():
    P = Potential.from_values([0, 1, 2, 3, 4, 5], lo=0)
    r = refine_right(P, Valley(0, 0, 5))
    assert r["drop"] == 0.0 and r["M1"] == r["m1"]


def test_refinement_detects_deep_sub_valley():
    # a second pit of depth 6 inside [m, M_right] of a depth-10 valley
    inc = [-1] * 10 + [1] * 8 + [-1] * 6 + [1] * 8
    S = np.concatenate([[0.0], np.cumsum(inc)])
    P = Potential.from_values(S, lo=0)
    v = Valley(0, 10, 32)
    assert is_valley(P, *v.__dict__.values())
    assert refine_right(P, v)["drop"] == 6.0


# ---------------------------------------------------------------- parameters

def test_gamma_params():
    p = GammaParams(1e6)
    assert p.Gamma_t == pytest.approx(math.log(1e6))
    assert p.u_radius == 6
    assert GammaParams(1e6, 2.0).Gamma_t == pytest.approx(math.log(1e6) + 2 * math.log(math.log(1e6)))
    with pytest.raises(ValueError):
        GammaParams(10.0)  # (log log t)^2 < 1
    with pytest.raises(ValueError):
        GammaParams(1e6, -1.0)


# ---------------------------------------------------------------- scans

def _first(scan, kind):
    return scan.of_kind(kind)[0]


def test_right_scan_on_W(W, G3):
    s = gamma_extrema_scan(W, G3, "right")
    # the rise above the running minimum S(3) = -2 first reaches 3 at S(5) = 1
    assert _first(s, MarkerKind.TAU_PLUS).position == 5
    m = _first(s, MarkerKind.M_PLUS_MIN)
    assert (m.position, m.value) == (3, -2.0)
    assert _first(s, MarkerKind.SIGMA_PLUS).position == 9
    M = _first(s, MarkerKind.M_PLUS)
    assert (M.position, M.value) == (8, 4.0)


def test_left_scan_on_W(W, G3):
    s = gamma_extrema_scan(W, G3, "left")
    assert _first(s, MarkerKind.TAU_MINUS).position == -3
    assert _first(s, MarkerKind.M_MINUS_MIN).position == 0
    assert _first(s, MarkerKind.SIGMA_MINUS).position == -5
    M = _first(s, MarkerKind.M_MINUS)
    assert (M.position, M.value) == (-3, 3.0)


def test_monotone_potential_never_closes(G3):
    P = Potential.from_values(np.arange(0, 60, dtype=float), lo=0)
    with pytest.raises(ScanIncomplete) as info:
        gamma_extrema_scan(P, G3, "right")
    s = info.value.partial
    assert _first(s, MarkerKind.TAU_PLUS).position == 3
    assert _first(s, MarkerKind.M_PLUS_MIN).position == 0


def test_extension_cap_reports_scan_incomplete():
    env = Environment(lo=-5, hi=5, alpha=np.full(11, 0.25), dist=EnvDistribution(), master_seed=0)
    # all alpha = 0.25 would be a hand-built drift; use a sampled env with a tiny cap instead
    P = compute_potential(sample_environment(EnvDistribution(), -5, 5, 0))
    with pytest.raises(ScanIncomplete):
        construct_cover(P, GammaParams(1e6), 50.0, cap_factor=1.0)
    del env


def fixed(P):
    return Potential.from_values(P.S.copy(), lo=P.lo)


@pytest.mark.parametrize("seed", range(40))
def test_reflection_covariance(seed):
    # continuous increments, so the +/- tie rule never matters
    P = fixed(sampled(seed, 300, "uniform_symmetric"))
    R = Potential.from_values(P.S[::-1].copy(), lo=-P.hi)
    try:
        ext = resolved_extrema(P, 4.0)
    except ScanIncomplete:
        return
    assert resolved_extrema(R, 4.0) == [(-x, k) for x, k in reversed(ext)]


@pytest.mark.parametrize("seed", range(20))
def test_translation_covariance(seed):
    P = fixed(sampled(seed, 300))
    shifted = Potential(P.lo, P.hi, P.S + 7.0, P.sigma2)
    # S[0] = 0 is a convention of the constructor only; the scans see differences
    assert resolved_extrema(P, 4.0) == resolved_extrema(shifted, 4.0)


# ---------------------------------------------------------------- brute force oracle

def test_brute_force_examples(W):
    assert brute_force_extrema(W, (-5, 9), 3.0) == [(-3, 1), (3, 0), (8, 1)]
    assert brute_force_extrema(flat(), (-20, 20), 1.0) == []
    assert brute_force_extrema(W, (-5, 9), 100.0) == []


@pytest.mark.parametrize("kind", ["two_point_symmetric", "uniform_symmetric"])
@pytest.mark.parametrize("Gamma", [2.0, 5.0, 9.5])
def test_scan_matches_brute_force(kind, Gamma):
    checked = 0
    for seed in range(60):
        # the uniform law has smaller sigma^2, so deep extrema need a wider window
        P = fixed(sampled(seed, 1500 if Gamma > 9 else 400, kind))
        try:
            ext = resolved_extrema(P, Gamma)
        except ScanIncomplete:
            continue
        assert ext == brute_force_extrema(P, (P.lo, P.hi), Gamma), seed
        checked += 1
    assert checked >= 40


@given(st.lists(st.integers(-3, 3), min_size=30, max_size=200), st.integers(1, 6))
@settings(max_examples=300, deadline=None)
def test_scan_matches_brute_force_on_integer_paths(steps, G):
    # integer potentials make ties frequent, which exercises the tie rule
    S = np.concatenate([[0], np.cumsum(steps)]).astype(float)
    z = len(steps) // 2
    S = S - S[z]
    P = Potential.from_values(S, lo=-z)
    try:
        scan = resolved_extrema(P, float(G))
    except ScanIncomplete:
        return
    assert scan == brute_force_extrema(P, (P.lo, P.hi), float(G))


@given(st.integers(0, 100_000))
@settings(max_examples=60, deadline=None)
def test_extrema_alternate_with_gamma_separation(seed):
    P = fixed(sampled(seed, 400))
    try:
        ext = resolved_extrema(P, 5.0)
    except ScanIncomplete:
        return
    kinds = [k for _, k in ext]
    assert all(a != b for a, b in zip(kinds, kinds[1:]))
    for (x, _), (y, _) in zip(ext, ext[1:]):
        assert abs(P(x) - P(y)) >= 5.0 - 1e-9


# ---------------------------------------------------------------- the cover

def test_cover_of_W(W, G3):
    d = construct_cover(W, G3, 9.0 / G3.scale)
    assert (d.M, d.m, d.n_f, d.case_At) == ([-3, 8], [3], 1, False)
    assert d.U == [(-4, -2), (7, 9)]
    assert indeterminate_sets(d) == d.U
    assert d.n_f == max(d.n_plus + d.n_minus - (0 if d.case_At else 1), 0)


def test_flat_potential_is_scan_incomplete(G3):
    with pytest.raises(ScanIncomplete):
        construct_cover(flat(), G3, 1.0)


def test_small_support_gives_no_valley(W, G3):
    d = construct_cover(W, G3, 1.0 / G3.scale)
    assert d.n_f == 0 and d.M == [] and d.V_f is None


def test_cover_rejects_non_positive_K(W, G3):
    with pytest.raises(ValueError):
        construct_cover(W, G3, 0.0)


@pytest.mark.parametrize("seed", range(25))
def test_cover_invariants_on_sampled_environments(seed):
    params = GammaParams(1e5)
    d = construct_cover(sampled(seed, 2000), params, 3.0)
    P = d.potential
    G = params.Gamma_t
    edge = d.support_edge
    assert all(-edge < m < edge for m in d.m)
    for v in d.valleys:
        assert is_valley(P, v.M_left, v.m, v.M_right)
        assert depth(P, v.M_left, v.m, v.M_right) >= G - 1e-9
        assert refine_right(P, v)["drop"] < G
        assert refine_left(P, v)["drop"] < G
    r = params.u_radius
    assert d.U == [(M - r, M + r) for M in d.M]
    # the formula for n_f holds whenever the central bottoms are inside the support
    inside = all(-edge < x < edge for x in (d.scans["left"].minima[:1] + d.scans["right"].minima[:1]))
    if inside:
        assert d.n_f == max(d.n_plus + d.n_minus - (0 if d.case_At else 1), 0)


def test_cover_is_deterministic():
    params = GammaParams(1e5)
    a = construct_cover(sampled(3, 1000), params, 4.0)
    b = construct_cover(sampled(3, 1000), params, 4.0)
    assert a.to_json_dict() == b.to_json_dict()


def test_cover_grows_window_on_demand():
    params = GammaParams(1e5)
    P = sampled(8, 50)
    d = construct_cover(P, params, 4.0)
    assert d.potential.hi > 50 and d.potential.lo < -50
    assert d.potential.hi >= 4.0 * params.scale


def test_u_sets_do_not_overlap_on_sampled_environments():
    params = GammaParams(1e6)
    for seed in range(30):
        d = construct_cover(sampled(seed, 1500), params, 5.0)
        for (a1, b1), (a2, b2) in zip(d.U, d.U[1:]):
            assert b1 < a2


def test_good_environment_report():
    params = GammaParams(1e6)
    ok = 0
    for seed in range(100):
        d = construct_cover(sampled(seed, 1500), params, 5.0)
        rep = check_good_environment(d, 40.0, 0.01, 40.0)
        assert rep.refinement_ok
        ok += rep.ok
    assert ok >= 95


def test_empty_decomposition_is_trivially_good(W, G3):
    d = construct_cover(W, G3, 1.0 / G3.scale)
    assert check_good_environment(d, 1.0, 0.5, 2.0).ok


def test_decomposition_exports(W, G3, tmp_path):
    d = construct_cover(W, G3, 9.0 / G3.scale)
    j = write_decomposition_json(d, tmp_path / "d.json").read_text()
    assert '"n_f": 1' in j and '"M": [' in j
    rows = write_decomposition_csv(d, tmp_path / "d.csv").read_text().splitlines()
    assert rows == ["kind,index,S", "M,-3,3", "m,3,-2", "M,8,4"]
