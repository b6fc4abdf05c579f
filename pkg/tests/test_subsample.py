import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from eivsub import (
    Dataset,
    ErrorCovariance,
    SamplingPlan,
    WeightedSubsample,
    draw_with_replacement,
    full_corrected_estimate,
    plugin_covariance,
    two_step_estimate,
    uniform_probs,
    weighted_corrected_estimate,
)
from eivsub.errors import PilotFailureError, ParameterError
from eivsub.subsample import _plugin_parts, conditional_variance, weighted_hessian, weighted_score

from conftest import random_problem


def test_point_mass_draws():
    sub = draw_with_replacement(SamplingPlan("UNIF", probs=[1.0, 0.0, 0.0]), 5, 0)
    assert sub.indices.tolist() == [0] * 5
    np.testing.assert_array_equal(sub.probs_at_draw, 1.0)


def test_uniform_frequencies():
    sub = draw_with_replacement(uniform_probs(4), 100_000, 11)
    freq = np.bincount(sub.indices, minlength=4) / 100_000
    sd = np.sqrt(0.25 * 0.75 / 100_000)
    assert np.all(np.abs(freq - 0.25) < 4 * sd)


def test_draw_determinism():
    a = draw_with_replacement(uniform_probs(50), 30, (3, "x"))
    b = draw_with_replacement(uniform_probs(50), 30, (3, "x"))
    c = draw_with_replacement(uniform_probs(50), 30, (3, "y"))
    np.testing.assert_array_equal(a.indices, b.indices)
    assert not np.array_equal(a.indices, c.indices)


def test_deterministic_plan_cannot_be_drawn():
    with pytest.raises(ParameterError):
        draw_with_replacement(SamplingPlan("IBOSS", indices=[0, 1]), 3, 0)


def test_zero_probability_cannot_be_recorded():
    with pytest.raises(ParameterError):
        WeightedSubsample([0], [0.0])


def test_whole_sample_uniform_weights_match_full(small_problem):
    data, sigma = small_problem
    sub = WeightedSubsample(np.arange(data.n), np.full(data.n, 1.0 / data.n))
    np.testing.assert_allclose(
        weighted_corrected_estimate(sub, data, sigma).beta, full_corrected_estimate(data, sigma).beta, atol=1e-10
    )


def test_golden_section_oracle():
    rng = np.random.default_rng(5)
    data = Dataset(rng.normal(size=(5, 1)), rng.normal(size=5))
    probs = np.array([0.1, 0.3, 0.2, 0.25, 0.15])
    sub = WeightedSubsample([0, 1, 1, 3, 4, 4, 4], probs[[0, 1, 1, 3, 4, 4, 4]])
    wts = sub.weights()
    w, y = data.w[sub.indices, 0], data.y[sub.indices]

    def loss(b):
        return 0.5 * np.sum(wts * (y - w * b) ** 2) / data.n

    best = minimize_scalar(loss, bracket=(-10, 10), method="golden", tol=1e-12).x
    got = weighted_corrected_estimate(sub, data, ErrorCovariance.zero(1)).beta[0]
    assert got == pytest.approx(best, abs=1e-7)


def _enumerate(n, r, probs):
    for draw in itertools.product(range(n), repeat=r):
        yield np.prod(probs[list(draw)]), WeightedSubsample(list(draw), probs[list(draw)])


@pytest.mark.parametrize("r", [1, 2, 3])
def test_exhaustive_unbiased_moments(r):
    rng = np.random.default_rng(r)
    data = Dataset(rng.normal(size=(5, 2)), rng.normal(size=5))
    sigma = ErrorCovariance([[0.05, 0.01], [0.01, 0.02]])
    probs = rng.dirichlet(np.ones(5))
    beta_hat = full_corrected_estimate(data, sigma).beta
    h = data.w.T @ data.w / data.n - sigma.sigma_uu
    eh, es, total = np.zeros((2, 2)), np.zeros(2), 0.0
    for pr, sub in _enumerate(5, r, probs):
        eh += pr * weighted_hessian(sub, data, sigma)
        es += pr * weighted_score(beta_hat, sub, data, sigma)
        total += pr
    assert total == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(eh, h, atol=1e-10)
    np.testing.assert_allclose(es, 0.0, atol=1e-10)


def test_three_record_enumeration():
    data = Dataset([[1.0], [2.0], [-1.0]], [1.0, 3.0, 0.5])
    sigma = ErrorCovariance([[0.1]])
    probs = np.array([0.2, 0.5, 0.3])
    beta_hat = full_corrected_estimate(data, sigma).beta
    avg = sum(pr * weighted_score(beta_hat, sub, data, sigma) for pr, sub in _enumerate(3, 2, probs))
    np.testing.assert_allclose(avg, 0.0, atol=1e-12)


def test_plugin_zero_sigma_brute_force():
    rng = np.random.default_rng(2)
    data = Dataset(rng.normal(size=(30, 2)), rng.normal(size=30))
    probs = rng.dirichlet(np.ones(30))
    idx = rng.choice(30, size=10, p=probs)
    sub = WeightedSubsample(idx, probs[idx])
    zero = ErrorCovariance.zero(2)
    beta = weighted_corrected_estimate(sub, data, zero).beta
    n, t = 30, 10
    h = sum(np.outer(data.w[i], data.w[i]) / probs[i] for i in idx) / (n * t)
    vc = sum((data.y[i] - data.w[i] @ beta) ** 2 * np.outer(data.w[i], data.w[i]) / probs[i] ** 2 for i in idx)
    vc = vc / (t**2 * n**2)
    expected = np.linalg.inv(h) @ vc @ np.linalg.inv(h)
    np.testing.assert_allclose(plugin_covariance(sub, beta, data, zero), expected, rtol=1e-10)


def test_plugin_homogeneity():
    rng = np.random.default_rng(4)
    w, y = rng.normal(size=(8, 2)), rng.normal(size=8)
    pi = rng.uniform(0.05, 0.2, size=8)
    beta = np.array([0.3, 0.7])
    s = np.zeros((2, 2))
    h1, v1 = _plugin_parts(w, y, pi, beta, s, 40)
    h2, v2 = _plugin_parts(w, y, pi / 2, beta, s, 40)
    np.testing.assert_allclose(h2, 2 * h1, rtol=1e-14)
    np.testing.assert_allclose(v2, 4 * v1, rtol=1e-14)


def test_plugin_psd_projection():
    # Large sigma makes the subtracted rank-one term dominate.
    data, _ = random_problem(1, n=200, p=2)
    sigma = ErrorCovariance.isotropic(2, 0.3)
    sub = draw_with_replacement(uniform_probs(200), 200, 0)
    beta = np.array([30.0, -30.0])
    cov, clipped = plugin_covariance(sub, beta, data, sigma, return_clipped=True)
    assert np.allclose(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() >= -1e-12
    assert np.all(np.diag(cov) >= 0)


# --- two-step -------------------------------------------------------------


def test_two_step_without_main_draw_is_pilot(small_problem):
    data, sigma = small_problem
    res = two_step_estimate(data, sigma, 20, 0, "mV", 3)
    np.testing.assert_array_equal(res.beta, res.pilot_beta)


def test_two_step_determinism(small_problem):
    data, sigma = small_problem
    a = two_step_estimate(data, sigma, 20, 30, "mV", 9)
    b = two_step_estimate(data, sigma, 20, 30, "mV", 9)
    np.testing.assert_array_equal(a.beta, b.beta)
    np.testing.assert_array_equal(a.cov, b.cov)
    np.testing.assert_array_equal(a.pooled.indices, b.pooled.indices)


def test_two_step_pools_draw_time_probabilities(small_problem):
    data, sigma = small_problem
    res = two_step_estimate(data, sigma, 20, 30, "mVc", 1)
    assert res.pooled.r == 50
    np.testing.assert_array_equal(res.pooled.probs_at_draw[:20], 1.0 / data.n)
    np.testing.assert_array_equal(res.pooled.probs_at_draw[20:], res.plan.probs[res.pooled.indices[20:]])


def _naive_two_step(data, r0, r, seed):
    """Uncorrected two-step least squares written without the correction."""
    from eivsub.rng import make_rng

    n = data.n
    i0 = make_rng((seed, "pilot")).choice(n, r0, p=np.full(n, 1 / n))
    w0, y0 = data.w[i0], data.y[i0]
    b0 = np.linalg.solve(w0.T @ w0, w0.T @ y0)
    score = np.abs(data.y - data.w @ b0) * np.linalg.norm(data.w, axis=1)
    pi = score / score.sum()
    i1 = make_rng((seed, "main")).choice(n, r, p=pi)
    idx = np.concatenate([i0, i1])
    pr = np.concatenate([np.full(r0, 1 / n), pi[i1]])
    wt = 1 / pr
    return np.linalg.solve((data.w[idx] * wt[:, None]).T @ data.w[idx], (data.w[idx] * wt[:, None]).T @ data.y[idx])


def test_two_step_zero_sigma_matches_naive_implementation():
    data, _ = random_problem(8, n=300, p=3, s2=0.0)
    got = two_step_estimate(data, ErrorCovariance.zero(3), 30, 60, "mVc", 4).beta
    np.testing.assert_allclose(got, _naive_two_step(data, 30, 60, 4), rtol=1e-10)


def test_two_step_rejects_small_pilot(small_problem):
    data, sigma = small_problem
    with pytest.raises(ParameterError):
        two_step_estimate(data, sigma, 3, 10, "mV", 0)


def test_two_step_pilot_failure_advice():
    w = np.zeros((50, 2))
    w[0] = [1.0, 0.0]
    w[1] = [0.0, 1.0]
    data = Dataset(w, np.ones(50))
    with pytest.raises(PilotFailureError) as info:
        two_step_estimate(data, ErrorCovariance.zero(2), 3, 10, "mV", 0)
    assert "r0" in str(info.value)


def test_two_step_degenerate_plan_falls_back_to_uniform():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(40, 2))
    data = Dataset(w, w @ np.array([1.0, -1.0]))
    res = two_step_estimate(data, ErrorCovariance.zero(2), 10, 10, "mVc", 0)
    assert res.fallback_uniform
    np.testing.assert_allclose(res.beta, [1.0, -1.0], atol=1e-10)


@pytest.mark.slow
def test_two_step_beats_uniform_case1():
    from eivsub.simgen import SimScenario, generate

    err_opt, err_unif = [], []
    for rep in range(200):
        g = generate(SimScenario(sigma_u2=0.4), seed=("order", rep))
        b = two_step_estimate(g.dataset, g.sigma, 500, 2000, "mV", ("ts", rep), covariance=False).beta
        sub = draw_with_replacement(uniform_probs(g.dataset.n), 2500, ("u", rep))
        u = weighted_corrected_estimate(sub, g.dataset, g.sigma).beta
        err_opt.append(np.sum((b - g.beta_true) ** 2))
        err_unif.append(np.sum((u - g.beta_true) ** 2))
    assert np.mean(err_opt) < np.mean(err_unif)


@pytest.mark.slow
def test_conditional_variance_matches_empirical():
    data, sigma = random_problem(12, n=5000, p=3, s2=0.3)
    beta_hat = full_corrected_estimate(data, sigma).beta
    from eivsub import optimal_probs_mvc

    plan = optimal_probs_mvc(data, beta_hat)
    v, _ = conditional_variance(data, beta_hat, sigma, plan.probs, 400)
    est = np.array(
        [weighted_corrected_estimate(draw_with_replacement(plan, 400, ("cv", k)), data, sigma).beta for k in range(2000)]
    )
    emp = np.cov(est.T)
    assert abs(np.trace(emp) - np.trace(v)) / np.trace(v) < 0.25
