import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import log_ndtr

from sbmds.core import CouplingScheme, DissimMatrix, LatentConfig, pairwise_distances
from sbmds.evaluation.checks import WORKED_DELTA, WORKED_X, central_difference
from sbmds.exceptions import DimensionError, DomainError
from sbmds.likelihood import (
    SparseLikelihood,
    coupling_count,
    coupling_pairs,
    coupling_set,
    eval_timer,
    grad_log_likelihood,
    log_likelihood,
    row_log_likelihood,
)

# ----------------------------------------------------------------------------
# test-local oracle: explicit index sets and a plain double loop


def index_set(scheme, n, N):
    """J_n in 0-based indices, written directly from the scheme definitions."""
    if scheme.kind == "full":
        return set(range(N)) - {n}
    if scheme.kind == "banded":
        B = scheme.size
        return set(range(max(0, n - B), min(N - 1, n + B) + 1)) - {n}
    L = scheme.size
    if n < L:
        return set(range(N)) - {n}
    return set(range(L))


def oracle(delta, X, sigma2, scheme):
    N = X.shape[0]
    sigma = math.sqrt(sigma2)
    ll = 0.0
    grad = np.zeros_like(X)
    for n in range(N):
        for m in sorted(index_set(scheme, n, N)):
            diff = X[n] - X[m]
            dstar = math.sqrt(float(diff @ diff))
            z = dstar / sigma
            if m > n:
                ll -= 0.5 * math.log(2 * math.pi * sigma2) + (delta[n, m] - dstar) ** 2 / (2 * sigma2) + log_ndtr(z)
            mills = math.exp(-0.5 * z * z - log_ndtr(z)) / math.sqrt(2 * math.pi)
            grad[n] -= ((dstar - delta[n, m]) / sigma2 + mills / sigma) * diff / dstar
    return ll, grad


def random_problem(rng, n, dim=2, noise=0.3):
    X = rng.standard_normal((n, dim))
    delta = np.abs(pairwise_distances(X) + noise * np.triu(rng.standard_normal((n, n)), 1))
    delta = np.triu(delta, 1)
    return delta + delta.T, X


SCHEMES_10 = [
    CouplingScheme.full(),
    CouplingScheme.banded(1),
    CouplingScheme.banded(3),
    CouplingScheme.landmark(1),
    CouplingScheme.landmark(4),
]


# ----------------------------------------------------------------------------
# coupling sets


@pytest.mark.parametrize("scheme", SCHEMES_10 + [CouplingScheme.banded(9), CouplingScheme.landmark(10)])
def test_coupling_sets_match_definition(scheme):
    N = 10
    for n in range(N):
        assert set(coupling_set(scheme, n, N).tolist()) == index_set(scheme, n, N)
    i, j = coupling_pairs(scheme, N)
    assert np.all(i < j)
    assert len(i) == coupling_count(scheme, N)
    assert {(a, b) for a, b in zip(i, j)} == {(n, m) for n in range(N) for m in index_set(scheme, n, N) if m > n}


@given(st.integers(2, 40), st.integers(1, 39))
def test_banded_count_formula(N, B):
    B = min(B, N - 1)
    # C = sum_{b=1..B} (N - b)
    assert coupling_count(CouplingScheme.banded(B), N) == sum(N - b for b in range(1, B + 1))


def test_worked_example_pairs_one_based():
    # banded 1 keeps (1,2),(2,3),(3,4),(4,5); landmark 1 keeps (1,2..5)
    b = {(i + 1, j + 1) for i, j in zip(*coupling_pairs(CouplingScheme.banded(1), 5))}
    lm = {(i + 1, j + 1) for i, j in zip(*coupling_pairs(CouplingScheme.landmark(1), 5))}
    assert b == {(1, 2), (2, 3), (3, 4), (4, 5)}
    assert lm == {(1, 2), (1, 3), (1, 4), (1, 5)}


# ----------------------------------------------------------------------------
# frozen values for the five-object worked example (sigma^2 = 0.25)

FROZEN_BANDED = [-0.8849259985018945, -1.4900640552516897, -1.7447312794128125, -1.9704238816951434]
FROZEN_LANDMARK = [-0.8756936607177482, -1.3127269296653752, -1.7576456752629963, -1.9704238816951434]


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_worked_example_loglik_frozen(k):
    b = log_likelihood(WORKED_DELTA, WORKED_X, 0.25, CouplingScheme.banded(k))
    lm = log_likelihood(WORKED_DELTA, WORKED_X, 0.25, CouplingScheme.landmark(k))
    assert b == pytest.approx(FROZEN_BANDED[k - 1], abs=1e-12)
    assert lm == pytest.approx(FROZEN_LANDMARK[k - 1], abs=1e-12)


# reference gradients for the worked example, computed with observed = latent
# distances; their signs are not consistent between entries, so only
# magnitudes are compared
REFERENCE_GRADIENTS = {
    ("banded", 1): [[-.010, .017], [.014, .011], [-.003, .013], [-.054, -.045], [.054, .038]],
    ("banded", 2): [[-.010, .018], [.275, .074], [-.026, .036], [-.315, -.108], [.077, .015]],
    ("banded", 3): [[-.005, .134], [.071, -.468], [-.026, .036], [-.321, .009], [.281, .557]],
    ("banded", 4): [[-.006, .135], [.071, -.468], [-.026, .036], [-.321, .009], [.281, .558]],
    ("landmark", 1): [[-.006, .135], [.010, .017], [.000, .000], [-.005, .117], [.000, .000]],
    ("landmark", 2): [[-.006, .135], [.071, -.468], [-.003, .006], [-.266, .054], [.204, .543]],
    ("landmark", 3): [[-.006, .135], [.071, -.468], [-.026, .036], [-.266, .047], [.227, .519]],
    ("landmark", 4): [[-.006, .135], [.071, -.468], [-.026, .036], [-.321, .009], [.281, .558]],
}


@pytest.mark.parametrize("key", sorted(REFERENCE_GRADIENTS))
def test_worked_example_gradient_magnitudes(key):
    kind, size = key
    scheme = CouplingScheme.banded(size) if kind == "banded" else CouplingScheme.landmark(size)
    delta = pairwise_distances(WORKED_X)
    g = grad_log_likelihood(delta, WORKED_X, 0.25, scheme)
    assert np.allclose(np.abs(g), np.abs(REFERENCE_GRADIENTS[key]), atol=0.01)


def test_complete_schemes_identical_bits():
    a = log_likelihood(WORKED_DELTA, WORKED_X, 0.25, CouplingScheme.banded(4))
    b = log_likelihood(WORKED_DELTA, WORKED_X, 0.25, CouplingScheme.landmark(5))
    c = log_likelihood(WORKED_DELTA, WORKED_X, 0.25)
    assert a == b == c


# ----------------------------------------------------------------------------
# oracle agreement


@pytest.mark.parametrize("scheme", SCHEMES_10)
@pytest.mark.parametrize("sigma2", [0.01, 0.3, 4.0])
def test_matches_double_loop(scheme, sigma2, rng):
    delta, X = random_problem(rng, 10)
    ll_ref, g_ref = oracle(delta, X, sigma2, scheme)
    lik = SparseLikelihood(delta, scheme)
    assert lik.log_likelihood(X, sigma2) == pytest.approx(ll_ref, rel=1e-12)
    assert np.allclose(lik.gradient(X, sigma2).grad, g_ref, rtol=1e-11, atol=1e-11)


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(2, 25),
    dim=st.integers(1, 4),
    frac=st.floats(0.0, 1.0),
    landmark=st.booleans(),
    seed=st.integers(0, 2**32 - 1),
)
def test_matches_double_loop_property(n, dim, frac, landmark, seed):
    rng = np.random.default_rng(seed)
    delta, X = random_problem(rng, n, dim)
    size = 1 + int(frac * (n - 2)) if n > 2 else 1
    scheme = CouplingScheme.landmark(size) if landmark else CouplingScheme.banded(size)
    ll_ref, g_ref = oracle(delta, X, 0.5, scheme)
    lik = SparseLikelihood(delta, scheme)
    assert lik.log_likelihood(X, 0.5) == pytest.approx(ll_ref, rel=1e-11, abs=1e-12)
    assert np.allclose(lik.gradient(X, 0.5).grad, g_ref, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("scheme", [CouplingScheme.full(), CouplingScheme.banded(3), CouplingScheme.landmark(2)])
def test_gradient_matches_finite_differences(scheme, rng):
    delta, X = random_problem(rng, 12, 3)
    lik = SparseLikelihood(delta, scheme)
    fd = central_difference(lambda Z: lik.log_likelihood(Z, 0.2), X, 1e-5)
    assert np.allclose(lik.gradient(X, 0.2).grad, fd, rtol=1e-6, atol=1e-6)


def test_extreme_small_sigma_stays_finite(rng):
    delta, X = random_problem(rng, 8)
    X[1] = X[0] + 1e-9  # latent distance far below sigma
    ll = log_likelihood(delta, X, 1e-6)
    g = grad_log_likelihood(delta, X, 1e-6)
    assert math.isfinite(ll)
    assert np.all(np.isfinite(g))


def test_coincident_points_are_counted(rng):
    delta, X = random_problem(rng, 6)
    X[3] = X[2]
    res = grad_log_likelihood(delta, X, 0.5, return_info=True)
    assert res.n_singular == 1
    assert np.all(np.isfinite(res.grad))


# ----------------------------------------------------------------------------
# invariances and per-row terms


@pytest.mark.parametrize("scheme", SCHEMES_10)
def test_rigid_motion_invariance(scheme, rng):
    delta, X = random_problem(rng, 10)
    theta = 0.7
    R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    moved = X @ R + np.array([3.0, -2.0])
    a = log_likelihood(delta, X, 0.4, scheme)
    b = log_likelihood(delta, moved, 0.4, scheme)
    assert abs(a - b) <= 1e-10 * abs(a)
    # gradients rotate with the configuration
    assert np.allclose(grad_log_likelihood(delta, moved, 0.4, scheme), grad_log_likelihood(delta, X, 0.4, scheme) @ R)


@pytest.mark.parametrize("scheme", SCHEMES_10)
def test_row_terms_give_single_object_difference(scheme, rng):
    delta, X = random_problem(rng, 10)
    for n in (0, 4, 9):
        x_new = X[n] + rng.normal(size=2) * 0.3
        moved = X.copy()
        moved[n] = x_new
        full_diff = log_likelihood(delta, moved, 0.3, scheme) - log_likelihood(delta, X, 0.3, scheme)
        row_diff = row_log_likelihood(delta, X, 0.3, scheme, n, x_new) - row_log_likelihood(delta, X, 0.3, scheme, n)
        assert row_diff == pytest.approx(full_diff, abs=1e-10)


def test_repeated_evaluation_is_bitwise_stable(rng):
    delta, X = random_problem(rng, 50)
    lik = SparseLikelihood(delta, CouplingScheme.banded(7))
    first = (lik.log_likelihood(X, 0.3), lik.gradient(X, 0.3).grad)
    for _ in range(3):
        assert lik.log_likelihood(X, 0.3) == first[0]
        assert np.array_equal(lik.gradient(X, 0.3).grad, first[1])


# ----------------------------------------------------------------------------
# errors and wrappers


def test_domain_and_dimension_errors(rng):
    delta, X = random_problem(rng, 5)
    for bad in (0.0, -1.0, float("nan"), float("inf")):
        with pytest.raises(DomainError):
            log_likelihood(delta, X, bad)
    with pytest.raises(DimensionError):
        log_likelihood(delta, X[:4], 0.5)
    with pytest.raises(DimensionError):
        SparseLikelihood(np.zeros((3, 4)))


def test_accepts_domain_types(rng):
    delta, X = random_problem(rng, 6)
    a = log_likelihood(DissimMatrix(delta), LatentConfig(X), 0.5, CouplingScheme.banded(2))
    b = log_likelihood(delta, X, 0.5, CouplingScheme.banded(2))
    assert a == b


def test_eval_timer(rng):
    delta, X = random_problem(rng, 30)
    rec = eval_timer(delta, X, 0.5, CouplingScheme.banded(3), reps=3)
    assert rec.n_objects == 30 and rec.scheme == "banded:3" and rec.reps == 3
    assert rec.likelihood_seconds > 0 and rec.gradient_seconds > 0
    with pytest.raises(ValueError):
        eval_timer(delta, X, 0.5, None, reps=2)
