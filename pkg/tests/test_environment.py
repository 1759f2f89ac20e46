import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from sinaiwalk.environment import (ConfigError, EnvDistribution, Environment, Potential,
                                   compute_potential, extend_environment, sample_environment,
                                   sigma2_analytic, verify_hypotheses, write_env_csv)

LOG3 = math.log(3.0)


@pytest.mark.parametrize("rho0", [0.5, 0.0, -0.1, 0.7])
def test_rho0_outside_open_interval_rejected(rho0):
    with pytest.raises(ConfigError):
        EnvDistribution("two_point_symmetric", rho0)


def test_unknown_kind_rejected():
    with pytest.raises(ConfigError):
        EnvDistribution("asymmetric", 0.25)


def test_empty_window_rejected():
    with pytest.raises(ConfigError):
        sample_environment(EnvDistribution(), 5, -5, 0)


def test_two_point_support():
    env = sample_environment(EnvDistribution(), -500, 500, 42)
    assert set(np.unique(env.alpha)) == {0.25, 0.75}


@pytest.mark.parametrize("kind", ["two_point_symmetric", "uniform_symmetric"])
def test_window_stability(kind):
    dist = EnvDistribution(kind, 0.25)
    small = sample_environment(dist, -10, 10, 9)
    big = sample_environment(dist, -20, 20, 9)
    np.testing.assert_array_equal(big.alpha[10:31], small.alpha)


def test_extend_environment():
    dist = EnvDistribution("uniform_symmetric", 0.2)
    env = sample_environment(dist, -5, 5, 3)
    assert extend_environment(env, -5, 5) is env
    wide = extend_environment(env, -10, 10)
    np.testing.assert_array_equal(wide.alpha[5:16], env.alpha)
    twice = extend_environment(extend_environment(env, -7, 6), -10, 10)
    assert twice.equals(wide)
    assert wide.equals(sample_environment(dist, -10, 10, 3))
    with pytest.raises(ConfigError):
        extend_environment(env, -4, 5)


def test_potential_flat_and_linear():
    flat = compute_potential(Environment.from_alpha([0.5] * 9, -4, validate=False))
    assert np.all(flat.S == 0)
    a = 1.0 / (1.0 + math.e)
    P = compute_potential(Environment.from_alpha([a] * 11, -5, validate=False))
    np.testing.assert_allclose(P.S, np.arange(-5, 6), atol=1e-12)


def test_potential_hand_example():
    # alpha_{-1}=0.75, alpha_0=0.25, alpha_1=0.25, alpha_2=0.75
    P = compute_potential(Environment.from_alpha([0.75, 0.25, 0.25, 0.75], -1))
    assert P(0) == 0.0
    assert P(1) == pytest.approx(LOG3)
    assert P(2) == pytest.approx(0.0, abs=1e-15)
    assert P(-1) == pytest.approx(-LOG3)


@given(st.integers(0, 10_000), st.sampled_from(["two_point_symmetric", "uniform_symmetric"]))
@settings(max_examples=30, deadline=None)
def test_potential_increments_reproduce_eps(seed, kind):
    dist = EnvDistribution(kind, 0.2)
    env = sample_environment(dist, -60, 60, seed)
    P = compute_potential(env)
    eps = np.log((1 - env.alpha) / env.alpha)
    # S[k] - S[k-1] = eps_k on both sides of the origin
    np.testing.assert_allclose(np.diff(P.S), eps[1:], rtol=0, atol=1e-12)
    assert P(0) == 0.0
    assert np.max(np.abs(np.diff(P.S))) <= dist.eps_max + 1e-12


def test_two_point_potential_is_exact_lattice():
    P = compute_potential(sample_environment(EnvDistribution(), -300, 300, 5))
    k = P.S / LOG3
    np.testing.assert_allclose(k, np.rint(k), rtol=0, atol=1e-9)


def test_sigma2_two_point():
    assert sigma2_analytic(EnvDistribution()) == pytest.approx(LOG3 ** 2)
    assert sigma2_analytic(EnvDistribution(rho0=0.49)) < 0.01


@pytest.mark.parametrize("rho0", [0.05, 0.1, 0.25, 0.4])
def test_sigma2_uniform_against_quadrature(rho0):
    val, _ = integrate.quad(lambda a: math.log((1 - a) / a) ** 2, rho0, 1 - rho0)
    expected = val / (1 - 2 * rho0)
    assert sigma2_analytic(EnvDistribution("uniform_symmetric", rho0)) == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("kind", ["two_point_symmetric", "uniform_symmetric"])
def test_eps_moments_over_a_million_sites(kind):
    dist = EnvDistribution(kind, 0.25)
    env = sample_environment(dist, -500_000, 499_999, 17)
    eps = np.log((1 - env.alpha) / env.alpha)
    s2 = sigma2_analytic(dist)
    assert abs(eps.mean()) <= 4 * math.sqrt(s2 / eps.size)
    assert eps.var() == pytest.approx(s2, rel=0.02)


@pytest.mark.parametrize("dist", [EnvDistribution(), EnvDistribution("uniform_symmetric", 0.1)])
def test_verify_hypotheses(dist):
    rep = verify_hypotheses(dist)
    assert rep.ok and rep.mean_eps == 0.0 and rep.sigma2 > 0 and rep.rho0 == dist.rho0


def test_env_csv_is_deterministic(tmp_path):
    env = sample_environment(EnvDistribution("uniform_symmetric", 0.25), -20, 20, 1)
    a = write_env_csv(env, compute_potential(env), tmp_path / "a.csv").read_bytes()
    b = write_env_csv(env, compute_potential(env), tmp_path / "b.csv").read_bytes()
    assert a == b
    lines = a.decode().split("\r\n")
    assert lines[0] == "index,alpha,S"
    assert lines[1].startswith("-20,")
