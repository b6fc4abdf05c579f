import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eivsub import (
    Dataset,
    ErrorCovariance,
    PerturbationWeights,
    cleps_estimate,
    full_corrected_estimate,
    generate_weights,
    perturbed_estimate,
)
from eivsub.errors import ParameterError, SingularSystemError, VarianceUnavailableError
from eivsub.perturbation import asymptotic_covariance, between_replicate_cov, perturbed_score

from conftest import random_problem


def test_degenerate_weights_at_full_rate():
    w = generate_weights(7, 1.0, 0, dist="degenerate")
    np.testing.assert_array_equal(w.psi, 1.0)
    assert w.b2 == 0.0


@pytest.mark.parametrize("q", [0.0, -0.1, 1.5])
def test_rate_out_of_range(q):
    with pytest.raises(ParameterError):
        generate_weights(10, q, 0)


def test_weight_moments():
    q, n = 0.2, 1_000_000
    w = generate_weights(n, q, 42)
    # E psi = 1, E psi^2 = q b2 + 1/q, Var psi = (2 - q)/q for exponential nu
    var = q * w.b2 + 1 / q - 1
    assert abs(w.psi.mean() - 1) < 4 * np.sqrt(var / n)
    m2 = q * w.b2 + 1 / q
    # fourth moment of psi: q * E nu^4 = q * 24 / q^4
    sd2 = np.sqrt((24 / q**3 - m2**2) / n)
    assert abs(np.mean(w.psi**2) - m2) < 4 * sd2
    frac = np.mean(w.psi > 0)
    assert abs(frac - q) < 4 * np.sqrt(q * (1 - q) / n)


@pytest.mark.parametrize("q", [0.01, 0.1, 0.5, 1.0])
def test_inflation_constant(q):
    w = generate_weights(10, q, 0)
    assert w.b2 == 1 / q**2
    assert abs(w.a - (1 - q + w.b2 * q**2)) <= 1e-15
    assert w.a == pytest.approx(2 - q, abs=1e-15)


@pytest.mark.parametrize("q", [Fraction(1, 100), Fraction(1, 10), Fraction(1, 2)])
def test_psi_variance_identity(q):
    b2 = 1 / q**2
    # E psi^2 - (E psi)^2 with psi = mu nu
    var = q * (b2 + 1 / q**2) - 1
    a = 1 - q + b2 * q**2
    n = 1000
    r = q * n
    assert var == n * a / r


def test_psi_zero_exactly_when_gate_closed():
    w = generate_weights(1000, 0.3, 5)
    assert np.all(w.psi >= 0)
    assert np.all((w.psi == 0) == ~np.isin(np.arange(1000), w.nonzero))


def test_unit_weights_give_full_estimate(small_problem):
    data, sigma = small_problem
    est = perturbed_estimate(data, sigma, PerturbationWeights(np.ones(data.n), 1.0, 0.0))
    np.testing.assert_allclose(est.beta, full_corrected_estimate(data, sigma).beta, atol=1e-12)


def test_perturbed_hand_oracle():
    data = Dataset([[1.0], [2.0]], [3.0, 1.0])
    est = perturbed_estimate(data, ErrorCovariance.zero(1), PerturbationWeights([2.0, 0.0], 0.5, 0.0))
    assert est.beta[0] == pytest.approx(3.0, abs=1e-15)


def test_all_zero_weights_singular(small_problem):
    data, sigma = small_problem
    with pytest.raises(SingularSystemError):
        perturbed_estimate(data, sigma, PerturbationWeights(np.zeros(data.n), 0.5, 4.0))


def test_perturbed_score_is_unbiased():
    data, sigma = random_problem(3, n=50, p=2)
    beta_hat = full_corrected_estimate(data, sigma).beta
    q = 0.3
    # Draw psi for all records in one block of 10^5 replicates.
    rng = np.random.default_rng(0)
    reps = 100_000
    psi = (rng.random((reps, 50)) < q) * rng.exponential(1 / q, size=(reps, 50))
    resid = data.y - data.w @ beta_hat
    scores = -(psi * resid) @ data.w / data.n - sigma.sigma_uu @ beta_hat
    mean = scores.mean(axis=0)
    se = scores.std(axis=0, ddof=1) / np.sqrt(reps)
    assert np.all(np.abs(mean) < 4 * se)
    np.testing.assert_allclose(perturbed_score(beta_hat, data, sigma, psi[0]), scores[0], atol=1e-12)


def test_exact_perturbed_score_expectation():
    data, sigma = random_problem(3, n=50, p=2)
    beta_hat = full_corrected_estimate(data, sigma).beta
    # E psi_i = 1, so the expected score is the full score at beta_hat.
    np.testing.assert_allclose(perturbed_score(beta_hat, data, sigma, np.ones(50)), 0.0, atol=1e-12)


def test_cleps_single_replicate_matches_perturbed_estimate(small_problem):
    data, sigma = small_problem
    res = cleps_estimate(data, sigma, 30, 1, 4)
    assert res.cov is None
    with pytest.raises(VarianceUnavailableError):
        res.require_cov()
    with pytest.raises(VarianceUnavailableError):
        cleps_estimate(data, sigma, 30, 1, 4, covariance=True)
    w = generate_weights(data.n, 30 / data.n, (4, "rep", 0, 0))
    np.testing.assert_array_equal(res.beta_mean, perturbed_estimate(data, sigma, w).beta)


def test_cleps_result_invariants():
    data, sigma = random_problem(1, n=400, p=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = cleps_estimate(data, sigma, 200, 8, 2)
    np.testing.assert_allclose(res.beta_mean, res.per_rep.mean(axis=0), atol=1e-14)
    np.testing.assert_array_equal(res.cov, res.cov.T)
    assert np.linalg.eigvalsh(res.cov).min() >= -1e-15
    assert res.q == 0.5
    np.testing.assert_allclose(res.cov, between_replicate_cov(res.per_rep))


def test_cleps_warns_when_many_replicates(small_problem):
    data, sigma = small_problem
    with pytest.warns(UserWarning, match="r/10"):
        cleps_estimate(data, sigma, 30, 5, 0)


def test_cleps_argument_checks(small_problem):
    data, sigma = small_problem
    with pytest.raises(ParameterError):
        cleps_estimate(data, sigma, 0, 2, 0)
    with pytest.raises(ParameterError):
        cleps_estimate(data, sigma, data.n + 1, 2, 0)
    with pytest.raises(ParameterError):
        cleps_estimate(data, sigma, 10, 0, 0)


def test_cleps_prefix_consistency():
    data, sigma = random_problem(7, n=500, p=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = cleps_estimate(data, sigma, 100, 3, 9)
        b = cleps_estimate(data, sigma, 100, 6, 9)
    np.testing.assert_array_equal(a.per_rep, b.per_rep[:3])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_row_permutation_leaves_estimate_unchanged(seed):
    data, sigma = random_problem(seed, n=60, p=2)
    w = generate_weights(60, 0.5, seed)
    perm = np.random.default_rng(seed).permutation(60)
    pw = PerturbationWeights(w.psi[perm], w.q, w.b2)
    pdata = Dataset(data.w[perm], data.y[perm])
    try:
        base = perturbed_estimate(data, sigma, w).beta
    except SingularSystemError:
        return
    # Gram sums run over the nonzero rows in stored order; compare to rounding.
    np.testing.assert_allclose(perturbed_estimate(pdata, sigma, pw).beta, base, rtol=1e-12, atol=1e-14)


def test_retry_on_singular_draw():
    # Only two informative records: most draws at q = 0.5 miss one of them.
    w = np.zeros((40, 2))
    w[0] = [1.0, 0.0]
    w[1] = [0.0, 1.0]
    data = Dataset(w, np.arange(40.0))
    outcomes = 0
    for seed in range(30):
        try:
            res = cleps_estimate(data, ErrorCovariance.zero(2), 20, 1, seed)
            outcomes += 1
            assert res.retries <= 3
        except SingularSystemError:
            outcomes += 1
    assert outcomes == 30


@pytest.mark.slow
def test_asymptotic_covariance_matches_empirical():
    data, sigma = random_problem(21, n=20_000, p=3, s2=0.3)
    beta_hat = full_corrected_estimate(data, sigma).beta
    m, r = 4, 500
    q = r / data.n
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = np.array([cleps_estimate(data, sigma, r, m, ("v", k)).beta_mean for k in range(2000)])
    emp = np.cov(est.T)
    theo = asymptotic_covariance(data, beta_hat, sigma, 2 - q, m, r)
    assert abs(np.trace(emp) - np.trace(theo)) / np.trace(theo) < 0.25
