import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from sinaiwalk.rng import (RngStream, binomial_many, derive_key, uniform_at, uniforms_for_sites)


def test_derive_key_depends_on_every_label():
    keys = {derive_key(1), derive_key(2), derive_key(1, "a"), derive_key(1, "b"), derive_key(1, "a", 0)}
    assert len(keys) == 5
    assert derive_key(7, "x", 3) == derive_key(7, "x", 3)


def test_site_uniforms_do_not_depend_on_window():
    key = np.uint64(derive_key(5, "env"))
    wide = uniforms_for_sites(key, -20, 41)
    narrow = uniforms_for_sites(key, -10, 21)
    np.testing.assert_array_equal(wide[10:31], narrow)


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**62))
@settings(max_examples=200, deadline=None)
def test_uniform_strictly_inside_unit_interval(key, counter):
    u = uniform_at(np.uint64(key), np.uint64(counter))
    assert 0.0 < u < 1.0


def test_uniforms_look_uniform():
    u = uniforms_for_sites(np.uint64(derive_key(0, "ks")), 0, 200_000)
    assert stats.kstest(u, "uniform").pvalue > 1e-3
    # consecutive pairs should be uncorrelated
    assert abs(np.corrcoef(u[:-1], u[1:])[0, 1]) < 0.01


def test_stream_advances_and_never_reuses():
    s = RngStream(derive_key(3, "dyn"))
    a = s.uniforms(10)
    b = s.uniforms(10)
    assert s.counter == 20
    assert not np.intersect1d(a, b).size
    s2 = RngStream(s.key)
    np.testing.assert_array_equal(s2.uniforms(20), np.concatenate([a, b]))


@pytest.mark.parametrize("n,p", [(0, 0.3), (5, 0.0), (5, 1.0), (7, 1.0)])
def test_binomial_degenerate_cases(n, p):
    out, _ = binomial_many(n, p, 50, derive_key(0, "deg"), 0)
    assert np.all(out == (n if p == 1.0 else 0))


@pytest.mark.parametrize("n,p", [
    (1, 0.25), (3, 0.75), (12, 0.25),      # inversion
    (40, 0.5), (100, 0.25), (1000, 0.75),  # transformed rejection
    (100_000, 0.25),
])
def test_binomial_matches_exact_law(n, p):
    size = 40_000
    draws, _ = binomial_many(n, p, size, derive_key(11, "binom", n, p), 0)
    assert draws.min() >= 0 and draws.max() <= n
    lo, hi = stats.binom.ppf([1e-4, 1 - 1e-4], n, p).astype(int)
    edges = np.arange(lo, hi + 2)
    obs, _ = np.histogram(np.clip(draws, lo, hi), bins=edges)
    probs = stats.binom.pmf(np.arange(lo, hi + 1), n, p)
    probs[0] += stats.binom.cdf(lo - 1, n, p)
    probs[-1] += stats.binom.sf(hi, n, p)
    exp = probs * size
    # merge sparse cells so the chi-square approximation holds
    keep_obs, keep_exp, acc_o, acc_e = [], [], 0.0, 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= 20:
            keep_obs.append(acc_o)
            keep_exp.append(acc_e)
            acc_o = acc_e = 0.0
    keep_obs[-1] += acc_o
    keep_exp[-1] += acc_e
    keep_exp = np.array(keep_exp) * (sum(keep_obs) / sum(keep_exp))
    chi2 = stats.chisquare(keep_obs, keep_exp)
    assert chi2.pvalue > 1e-4


def test_binomial_concentration_single_site():
    # 1e5 particles at alpha = 0.25 send about 25000 to the right
    draws, _ = binomial_many(100_000, 0.25, 200, derive_key(2, "conc"), 0)
    sd = np.sqrt(100_000 * 0.25 * 0.75)
    assert np.all(np.abs(draws - 25_000) <= 4 * sd + 1)
