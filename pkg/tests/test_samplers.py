import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import log_ndtr

from sbmds.core import CouplingScheme, pairwise_distances
from sbmds.evaluation.diagnostics import ess
from sbmds.exceptions import ConfigurationError
from sbmds.samplers import (
    ChainState,
    PriorSpec,
    SamplerConfig,
    adapt_scale,
    conditional_log_ratio,
    hmc_transition,
    leapfrog,
    log_inverse_gamma,
    log_posterior,
    log_prior_locations,
    mh_location_step,
    read_trace,
    run_chain,
    sigma2_log_ratio,
)


def small_problem(rng, n=8, dim=2, noise=0.1):
    X = rng.standard_normal((n, dim))
    d = pairwise_distances(X)
    upper = np.triu(np.abs(d + noise * rng.standard_normal(d.shape)), 1)
    return upper + upper.T, X


# ----------------------------------------------------------------------------
# densities


def test_log_inverse_gamma_values():
    # IG(1; shape 1, scale 1) = exp(-1)
    assert log_inverse_gamma(1.0, 1.0, 1.0) == pytest.approx(-1.0)
    assert log_inverse_gamma(2.0, 3.0, 0.5) == pytest.approx(
        3 * math.log(0.5) - math.lgamma(3.0) - 4 * math.log(2.0) - 0.25
    )
    assert log_inverse_gamma(0.0, 1.0, 1.0) == -math.inf


def test_log_prior_locations_matches_normal():
    X = np.array([[0.5, -1.0], [2.0, 0.0]])
    priors = PriorSpec(location_var=[1.0, 4.0])
    expected = sum(
        -0.5 * math.log(2 * math.pi * v) - 0.5 * x**2 / v for row in X for x, v in zip(row, [1.0, 4.0])
    )
    assert log_prior_locations(X, priors) == pytest.approx(expected)


def test_prior_validation():
    with pytest.raises(ConfigurationError):
        PriorSpec(location_var=0.0)
    with pytest.raises(ConfigurationError):
        PriorSpec(sigma2_shape=-1.0)


# ----------------------------------------------------------------------------
# adaptation


def test_adapt_scale_factors():
    assert adapt_scale(1.0, 2, True) == pytest.approx(1.01)
    assert adapt_scale(1.0, 2, False) == pytest.approx(0.99)
    assert adapt_scale(2.0, 10**6, True) == pytest.approx(2.0 * (1 + 1e-3))
    with pytest.raises(ValueError):
        adapt_scale(1.0, 1, True)


def test_adaptation_factors_tend_to_one():
    factors = [adapt_scale(1.0, s, True) - 1.0 for s in (2, 10**4 + 1, 10**6 + 1, 10**8 + 1)]
    assert factors == sorted(factors, reverse=True)
    assert factors[-1] == pytest.approx(1e-4)


def test_scales_frozen_after_burn_in(rng):
    delta, _ = small_problem(rng)
    seen = []
    run_chain(
        delta,
        config=SamplerConfig(iterations=120, burn_in=60, thin=10, leapfrog_steps=3),
        callback=lambda st: seen.append((st.iteration, st.location_scale, st.sigma2_scale)),
    )
    post = {(a, b) for it, a, b in seen if it >= 60}
    assert len(post) == 1
    during = {a for it, a, _ in seen if it < 60}
    assert len(during) > 1


def test_freeze_at_last_value_option(rng):
    delta, _ = small_problem(rng)
    last = []
    cfg = SamplerConfig(iterations=80, burn_in=40, thin=10, leapfrog_steps=3, freeze_scale="last")
    run_chain(delta, config=cfg, callback=lambda st: last.append(st.location_scale))
    assert last[39] == last[-1]
    with pytest.raises(ConfigurationError):
        SamplerConfig(freeze_scale="median")


# ----------------------------------------------------------------------------
# MH


@pytest.mark.parametrize("scheme", [CouplingScheme.full(), CouplingScheme.banded(2), CouplingScheme.landmark(3)])
def test_conditional_ratio_equals_full_posterior_ratio(scheme, rng):
    delta, X = small_problem(rng, n=20)
    priors = PriorSpec(location_var=2.0)
    for n in range(0, 20, 3):
        x_new = X[n] + 0.4 * rng.standard_normal(2)
        moved = X.copy()
        moved[n] = x_new
        brute = log_posterior(delta, moved, 0.3, scheme, priors) - log_posterior(delta, X, 0.3, scheme, priors)
        got = conditional_log_ratio(delta, X, 0.3, scheme, priors, n, x_new)
        assert got == pytest.approx(brute, abs=1e-10)


def test_mh_tiny_steps_always_accepted(rng):
    delta, X = small_problem(rng)
    state = ChainState(X=X, sigma2=0.1, location_scale=1e-12, sigma2_scale=0.1)
    acc = mh_location_step(state, delta, CouplingScheme.full(), PriorSpec(), rng)
    assert acc == 8
    assert np.allclose(state.X, X, atol=1e-10)


def test_mh_sweep_matches_python_reference(rng):
    delta, X = small_problem(rng, n=6)
    scheme, priors = CouplingScheme.banded(2), PriorSpec()
    state = ChainState(X=X.copy(), sigma2=0.2, location_scale=0.3, sigma2_scale=0.1)
    mh_location_step(state, delta, scheme, priors, np.random.default_rng(7))
    # replay the same random numbers through the brute-force posterior
    r = np.random.default_rng(7)
    steps = 0.3 * r.standard_normal((6, 2))
    log_u = np.log(r.random(6))
    ref = X.copy()
    for n in range(6):
        prop = ref.copy()
        prop[n] = ref[n] + steps[n]
        ratio = log_posterior(delta, prop, 0.2, scheme, priors) - log_posterior(delta, ref, 0.2, scheme, priors)
        if log_u[n] < ratio:
            ref = prop
    assert np.allclose(state.X, ref, atol=1e-12)


# ----------------------------------------------------------------------------
# HMC


def quadratic(prec=1.0):
    return (lambda x: 0.5 * prec * float(np.sum(x * x))), (lambda x: prec * x)


def test_leapfrog_is_reversible(rng):
    U, dU = quadratic(2.0)
    X, P = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    X1, P1 = leapfrog(X, P, 0.1, 15, dU)
    X2, P2 = leapfrog(X1, -P1, 0.1, 15, dU)
    assert np.allclose(X2, X, atol=1e-12)
    assert np.allclose(-P2, P, atol=1e-12)
    # inputs untouched, zero steps is the identity
    X0, P0 = leapfrog(X, P, 0.1, 0, dU)
    assert np.array_equal(X0, X) and np.array_equal(P0, P)


def test_leapfrog_energy_error_shrinks_with_step(rng):
    U, dU = quadratic()
    X, P = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))

    def dH(eps):
        X1, P1 = leapfrog(X, P, eps, int(1 / eps), dU)
        return abs(U(X1) + 0.5 * np.sum(P1**2) - U(X) - 0.5 * np.sum(P**2))

    assert dH(0.01) < dH(0.1) / 50


def test_leapfrog_reports_blowup():
    assert leapfrog(np.ones((1, 1)), np.ones((1, 1)), 1.0, 3, lambda x: np.full_like(x, np.nan)) is None


def test_hmc_small_step_accepts(rng):
    U, dU = quadratic()
    res = [hmc_transition(np.ones((2, 2)), U, dU, 1e-6, 5, rng).accepted for _ in range(50)]
    assert all(res)


def test_hmc_decisions_ignore_constant_offset():
    U, dU = quadratic(3.0)
    x1 = x2 = np.array([[0.3, -0.2]])
    r1, r2 = np.random.default_rng(1), np.random.default_rng(1)
    for _ in range(200):
        a = hmc_transition(x1, U, dU, 0.9, 4, r1)
        b = hmc_transition(x2, lambda x: U(x) + 1234.5, dU, 0.9, 4, r2)
        assert a.accepted == b.accepted
        x1, x2 = a.x, b.x
    assert np.array_equal(x1, x2)


def test_energy_difference_flips_under_reversal(rng):
    U, dU = quadratic(1.5)
    X, P0 = rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
    X1, P1 = leapfrog(X, P0, 0.2, 7, dU)

    def log_ratio(xa, pa, xb, pb):
        return -U(xb) + U(xa) - 0.5 * np.sum(pb**2) + 0.5 * np.sum(pa**2)

    forward = log_ratio(X, P0, X1, P1)
    X2, P2 = leapfrog(X1, -P1, 0.2, 7, dU)
    backward = log_ratio(X1, -P1, X2, P2)
    assert backward == pytest.approx(-forward, abs=1e-12)


def test_hmc_standard_normal_variance():
    U, dU = quadratic()
    rng = np.random.default_rng(3)
    x = np.zeros((1, 1))
    draws = np.empty(20000)
    for i in range(draws.size):
        x = hmc_transition(x, U, dU, 0.9, 3, rng).x
        draws[i] = x[0, 0]
    n_eff = ess(draws)
    assert n_eff > 10000
    assert draws.var() == pytest.approx(1.0, abs=0.05)


def test_hmc_recovers_correlated_gaussian():
    cov = np.array([[1.0, 0.6], [0.6, 0.5]])
    prec = np.linalg.inv(cov)
    mean = np.array([1.0, -2.0])

    def U(x):
        d = x[0] - mean
        return 0.5 * float(d @ prec @ d)

    def dU(x):
        return ((x[0] - mean) @ prec)[None, :]

    rng = np.random.default_rng(11)
    x = mean[None, :].copy()
    draws = np.empty((20000, 2))
    for i in range(len(draws)):
        x = hmc_transition(x, U, dU, 0.3, 8, rng).x
        draws[i] = x[0]
    for k in range(2):
        se = draws[:, k].std() / math.sqrt(ess(draws[:, k]))
        assert abs(draws[:, k].mean() - mean[k]) < 3 * se
    emp = np.cov(draws.T)
    assert np.allclose(emp, cov, atol=0.05)


# ----------------------------------------------------------------------------
# sigma2


def test_sigma2_ratio_includes_truncation_correction():
    priors = PriorSpec()
    got = sigma2_log_ratio(-10.0, -9.0, 0.3, 0.05, 0.2, priors)
    expected = (
        1.0
        + log_inverse_gamma(0.05, 1, 1)
        - log_inverse_gamma(0.3, 1, 1)
        + log_ndtr(0.3 / 0.2)
        - log_ndtr(0.05 / 0.2)
    )
    assert got == pytest.approx(expected, abs=1e-12)


# ----------------------------------------------------------------------------
# chain driver


def test_run_chain_shapes_and_determinism(rng):
    delta, _ = small_problem(rng, n=10)
    cfg = SamplerConfig(iterations=105, burn_in=20, thin=10, leapfrog_steps=4, seed=5)
    a = run_chain(delta, CouplingScheme.banded(3), config=cfg)
    b = run_chain(delta, CouplingScheme.banded(3), config=cfg)
    assert len(a) == (105 - 20) // 10 == 8
    assert a.samples.shape == (8, 10, 2)
    assert list(a.iterations) == [30, 40, 50, 60, 70, 80, 90, 100]
    assert np.array_equal(a.samples, b.samples) and np.array_equal(a.sigma2, b.sigma2)
    assert a.meta["seed"] == 5 and a.meta["scheme"] == "banded:3"
    assert 0 <= a.acceptance["location"] <= 1


def test_run_chain_complete_schemes_identical(rng):
    delta, _ = small_problem(rng, n=9)
    cfg = SamplerConfig(iterations=60, burn_in=10, thin=5, leapfrog_steps=3)
    full = run_chain(delta, CouplingScheme.full(), config=cfg)
    for scheme in (CouplingScheme.banded(8), CouplingScheme.landmark(9)):
        other = run_chain(delta, scheme, config=cfg)
        assert np.array_equal(full.samples, other.samples)


def test_run_chain_mh_and_init_options(rng):
    delta, X = small_problem(rng, n=7)
    tr = run_chain(delta, config=SamplerConfig(algorithm="mh", iterations=50, burn_in=10, thin=5), init=X)
    assert tr.meta["init"] == "user"
    tr = run_chain(delta, config=SamplerConfig(iterations=30, burn_in=10, thin=5, leapfrog_steps=2), init="random", dim=3)
    assert tr.samples.shape[2] == 3
    with pytest.raises(ConfigurationError):
        run_chain(delta, init=np.zeros((3, 2)))
    with pytest.raises(ConfigurationError):
        run_chain(delta, init="spectral")


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(algorithm="nuts"),
        dict(iterations=10, burn_in=10),
        dict(thin=0),
        dict(target_accept=1.5),
        dict(initial_step=-1.0),
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        SamplerConfig(**kwargs)


@given(st.integers(1, 500), st.integers(0, 499), st.integers(1, 50))
def test_retained_count(iterations, burn_in, thin):
    if burn_in >= iterations:
        return
    assert SamplerConfig(iterations=iterations, burn_in=burn_in, thin=thin).n_retained == (iterations - burn_in) // thin


def test_trace_csv_roundtrip(tmp_path, rng):
    delta, _ = small_problem(rng, n=4)
    tr = run_chain(delta, config=SamplerConfig(iterations=40, burn_in=10, thin=10, leapfrog_steps=2))
    tr.to_csv(tmp_path / "t.csv", tmp_path / "m.json")
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "iter,sigma2,x_1_1,x_1_2,x_2_1,x_2_2,x_3_1,x_3_2,x_4_1,x_4_2"
    back = read_trace(tmp_path / "t.csv", tmp_path / "m.json")
    assert np.array_equal(back.samples, tr.samples)
    assert np.array_equal(back.sigma2, tr.sigma2)
    assert back.acceptance == tr.acceptance
    meta = json.loads((tmp_path / "m.json").read_text())
    assert meta["config"]["seed"] == 0 and meta["n_retained"] == 3


def test_two_object_toy_mh_agrees_with_hmc():
    # one observed distance; compare posterior means of the latent distance
    delta = np.array([[0.0, 1.0], [1.0, 0.0]])
    mh = run_chain(delta, config=SamplerConfig(algorithm="mh", iterations=101000, burn_in=1000, thin=10, seed=1), dim=1)
    hmc = run_chain(delta, config=SamplerConfig(iterations=21000, burn_in=1000, thin=2, seed=2, leapfrog_steps=10), dim=1)
    stats = []
    for tr in (mh, hmc):
        d = np.abs(tr.samples[:, 0, 0] - tr.samples[:, 1, 0])
        stats.append((d.mean(), d.std() / math.sqrt(ess(d))))
    (m1, s1), (m2, s2) = stats
    assert abs(m1 - m2) < 3 * math.hypot(s1, s2)


def test_low_noise_full_fit_is_accurate():
    from sbmds.evaluation import SimSpec, mean_mse, simulate_dataset

    _, d_true, d_obs = simulate_dataset(SimSpec(10, 2, 0.1, seed=0))
    trace = run_chain(d_obs, CouplingScheme.full(), config=SamplerConfig(iterations=3000, burn_in=500, thin=5))
    assert mean_mse(trace, d_true) < 0.05
