import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from rxninfer.bayes import (
    ConditionalGaussian,
    Dataset,
    FDConfig,
    OptimizerConfig,
    Posterior,
    central_gradient,
    conditional_gaussian,
    conditional_mode,
    find_mode,
    gaussian_log_likelihood,
    laplace_covariance,
    log_likelihood,
    log_posterior,
    log_prior,
    slot_vector,
)
from rxninfer.kinetics import RateParameters
from rxninfer.network import ModelIndicator, Prior, Reaction, ReactionNetwork, Species, all_models

DERIVED = json.loads((Path(__file__).parent / "derived_values.json").read_text())


def _one_reaction_net(mean=0.3, var=0.04):
    return ReactionNetwork(
        (Species("A", 1.0), Species("B", 0.0, observed=True)),
        (Reaction(id=1, reactants=("A",), products=("B",), log10_k=mean, fixed=False, prior=Prior(mean, var)),),
    )


def _base_theta(net):
    return slot_vector(net, RateParameters.base(net))


# -- priors ------------------------------------------------------------------------------


def test_log_prior_at_mean():
    net = _one_reaction_net(0.3, 0.04)
    value = log_prior(net, ModelIndicator.full(1), {(1, "f"): 0.3})
    assert value == pytest.approx(DERIVED["log_prior_at_mean_sd02"], abs=1e-12)
    assert value == pytest.approx(-0.5 * math.log(2 * math.pi * 0.04))


def test_log_prior_empty_model_is_zero(ex1):
    assert log_prior(ex1, ModelIndicator.empty(5), {}) == 0.0


def test_log_prior_independent_sum(ex1):
    theta = _base_theta(ex1)
    both = log_prior(ex1, ex1.model_from_reactions({3, 4}), theta)
    one = log_prior(ex1, ex1.model_from_reactions({3}), theta)
    other = log_prior(ex1, ex1.model_from_reactions({4}), theta)
    assert both == pytest.approx(one + other, abs=1e-12)


def test_log_prior_missing_value_raises(ex1):
    with pytest.raises(ValueError):
        log_prior(ex1, ModelIndicator.full(5), {(3, "f"): 0.5})


@pytest.mark.parametrize("mean,var", [(0.0, 0.2), (1.4, 0.5), (-2.0, 0.04)])
def test_log_prior_integrates_to_one(mean, var):
    net = _one_reaction_net(mean, var)
    s = math.sqrt(var)
    z, _ = quad(lambda x: math.exp(log_prior(net, ModelIndicator.full(1), {(1, "f"): x})), mean - 12 * s, mean + 12 * s)
    assert z == pytest.approx(1.0, abs=1e-6)


# -- likelihood -------------------------------------------------------------------------


def test_zero_residual_d20():
    value = gaussian_log_likelihood(np.zeros(20), 4.0)
    assert value == pytest.approx(DERIVED["ll_zero_residual_d20_var4"], abs=1e-10)
    assert value == pytest.approx(-10 * math.log(8 * math.pi), abs=1e-12)


def test_single_residual_of_one_sigma():
    s2 = 2.5
    value = gaussian_log_likelihood(np.array([math.sqrt(s2)]), s2)
    assert value == pytest.approx(-0.5 * math.log(2 * math.pi * s2) - 0.5)


def test_likelihood_at_noise_free_data(ex1):
    from rxninfer.kinetics import predict_observables

    times = np.linspace(0.5, 10, 20)
    g = predict_observables(ex1, ModelIndicator.full(5), RateParameters.base(ex1), times)
    data = Dataset(times, g, 4.0)
    ll = log_likelihood(ex1, ModelIndicator.full(5), RateParameters.base(ex1), data)
    assert ll == pytest.approx(DERIVED["ll_zero_residual_d20_var4"], abs=1e-9)


def test_likelihood_equal_for_model_and_effective_network(ex1, ex1_data, rng):
    post = Posterior(ex1, ex1_data)
    for _ in range(50):
        m = ModelIndicator(tuple(bool(b) for b in rng.integers(0, 2, 5)))
        theta = post.prior_mean + post.prior_std * rng.standard_normal(post.prior_mean.size)
        a = log_likelihood(ex1, m, theta, ex1_data)
        b = log_likelihood(ex1, m, theta, ex1_data, restrict_to_effective_network=True)
        assert abs(a - b) <= 10 * 1e-8 * abs(a)


def test_integration_failure_gives_minus_inf(ex1, ex1_data):
    from rxninfer.kinetics import IntegratorConfig

    theta = _base_theta(ex1)
    cfg = IntegratorConfig(max_steps=1)
    assert log_likelihood(ex1, ModelIndicator.full(5), theta, ex1_data, cfg) == -math.inf
    assert log_posterior(ex1, ModelIndicator.full(5), theta, ex1_data, cfg) == -math.inf


# -- posterior -----------------------------------------------------------------------------


def test_uniform_model_prior_constant(ex1, ex1_data):
    post = Posterior(ex1, ex1_data)
    for m in all_models(ex1):
        assert post.model_log_prior(m) == pytest.approx(-math.log(32), abs=1e-12)


def test_posterior_higher_at_truth_than_shifted(ex1, ex1_data):
    theta = _base_theta(ex1)
    at_truth = log_posterior(ex1, ModelIndicator.full(5), theta, ex1_data)
    shifted = log_posterior(ex1, ModelIndicator.full(5), theta + 2.0, ex1_data)
    assert math.isfinite(at_truth)
    assert at_truth > shifted


def test_posterior_decomposition(ex1, ex1_data):
    theta = _base_theta(ex1)
    m = ModelIndicator.full(5)
    total = log_posterior(ex1, m, theta, ex1_data)
    parts = -math.log(32) + log_prior(ex1, m, theta) + log_likelihood(ex1, m, theta, ex1_data)
    assert total == pytest.approx(parts, abs=1e-9)


@pytest.mark.parametrize("h", [1e-3, 5e-4])
def test_fd_gradient_matches_optimizer_difference(ex1, ex1_data, h):
    post = Posterior(ex1, ex1_data)
    m = ModelIndicator.full(5)
    theta = _base_theta(ex1)

    def f(x):
        return post.log_target(m, x)

    g = central_gradient(f, theta, h)
    for i in range(theta.size):
        e = np.zeros(theta.size)
        e[i] = h
        assert g[i] == pytest.approx((f(theta + e) - f(theta - e)) / (2 * h), rel=1e-5)


def test_fd_gradient_step_consistency_on_smooth_target(ex1):
    post = Posterior(ex1, Dataset.empty())
    m = ModelIndicator.full(5)
    theta = post.prior_mean + 0.3 * post.prior_std

    def f(x):
        return post.log_target(m, x)

    exact = -(theta - post.prior_mean) / post.prior_var
    for h in (1e-3, 5e-4):
        np.testing.assert_allclose(central_gradient(f, theta, h), exact, rtol=1e-5)


# -- conditional mode / Gaussian -----------------------------------------------------------------


def test_quadratic_mode_and_covariance():
    C = np.array([[0.3, 0.1], [0.1, 0.2]])
    P = np.linalg.inv(C)
    mu = np.array([0.7, -1.2])

    def f(x):
        d = x - mu
        return -0.5 * d @ P @ d

    mode = find_mode(f, [np.zeros(2)], OptimizerConfig())
    assert np.all(np.abs(mode - mu) <= 1e-5)
    cov = laplace_covariance(f, mode, np.ones(2), FDConfig())
    np.testing.assert_allclose(cov, C, rtol=1e-4)


def test_one_dimensional_quadratic_vertex():
    mode = find_mode(lambda x: -3.0 * (x[0] - 0.25) ** 2, [np.array([2.0])])
    assert abs(mode[0] - 0.25) <= 1e-5


def test_free_slots_outside_en_give_prior(ex1, ex1_data):
    # reaction 3 missing: reactions 4 and 7 cannot reach BRaf
    m = ex1.model_from_reactions(set(range(1, 13)) - {3})
    post = Posterior(ex1, ex1_data)
    theta = _base_theta(ex1)
    free = [ex1.parameter_slots.index((4, "f")), ex1.parameter_slots.index((7, "f"))]
    fixed = [(i, theta[i]) for i in range(len(theta)) if i not in free]
    g = conditional_gaussian(ex1, m, fixed, free, ex1_data)
    np.testing.assert_array_equal(g.mean, post.prior_mean[free])
    np.testing.assert_array_equal(g.covariance, np.diag(post.prior_var[free]))
    np.testing.assert_array_equal(conditional_mode(ex1, m, fixed, free, ex1_data), post.prior_mean[free])


def test_reaction4_mode_matches_grid(ex1, ex1_data):
    oracle = DERIVED["example1_reaction4"]
    theta = _base_theta(ex1)
    i4 = ex1.parameter_slots.index((4, "f"))
    fixed = {i: v for i, v in enumerate(theta) if i != i4}
    mode = conditional_mode(ex1, ModelIndicator.full(5), fixed, [i4], ex1_data)
    assert abs(mode[0] - oracle["mode"]) <= oracle["grid_spacing"]


def test_reaction4_variance_matches_oracle_curvature(ex1, ex1_data):
    """Laplace variance equals -1 / (d^2/dx^2 log p) at the mode, evaluated on
    the independent transcription with ODEPACK."""
    import oracles

    t, y = ex1_data.times, ex1_data.observations
    theta = _base_theta(ex1)
    i4 = ex1.parameter_slots.index((4, "f"))
    fixed = {i: v for i, v in enumerate(theta) if i != i4}
    g = conditional_gaussian(ex1, ModelIndicator.full(5), fixed, [i4], ex1_data)

    def lf(x):
        return oracles.gaussian_ll(y, oracles.odeint_braf(t, {"4": x}), 4.0) + oracles.normal_logpdf(x, 1.4, 0.2)

    m, h = g.mean[0], 3e-3
    curvature = (lf(m + h) - 2 * lf(m) + lf(m - h)) / h**2
    assert g.covariance[0, 0] == pytest.approx(-1.0 / curvature, rel=0.02)


@pytest.mark.xfail(
    strict=True,
    reason="the reaction-4 conditional is right-skewed on this dataset (mode 2.003, mean 2.065); "
    "its curvature variance 0.0209 is 28% below the quadrature variance 0.0290",
)
def test_reaction4_variance_near_quadrature(ex1, ex1_data):
    oracle = DERIVED["example1_reaction4"]
    theta = _base_theta(ex1)
    i4 = ex1.parameter_slots.index((4, "f"))
    fixed = {i: v for i, v in enumerate(theta) if i != i4}
    g = conditional_gaussian(ex1, ModelIndicator.full(5), fixed, [i4], ex1_data)
    assert g.covariance[0, 0] == pytest.approx(oracle["variance"], rel=0.2)


def test_gaussian_is_cached_and_deterministic(ex1, ex1_data):
    post = Posterior(ex1, ex1_data)
    theta = _base_theta(ex1)
    i4 = ex1.parameter_slots.index((4, "f"))
    a = post.gaussian(ModelIndicator.full(5), [i4], theta)
    b = post.gaussian(ModelIndicator.full(5), [i4], theta)
    assert a is b and post.n_gaussians == 1


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=3, max_size=3),
    st.lists(st.floats(0.05, 2.0), min_size=3, max_size=3),
)
def test_conditional_gaussian_logpdf_matches_scipy(mean, diag):
    from scipy.stats import multivariate_normal

    cov = np.diag(diag) + 0.01
    g = ConditionalGaussian(np.array(mean), cov)
    x = np.array(mean) + 0.3
    assert g.logpdf(x) == pytest.approx(multivariate_normal(mean, cov).logpdf(x), abs=1e-9)


# -- dataset ----------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        dict(times=[1.0, 0.5], observations=[1.0, 2.0], noise_variance=1.0),
        dict(times=[1.0, 2.0], observations=[1.0, 2.0], noise_variance=0.0),
        dict(times=[1.0, 2.0], observations=[1.0, 2.0, 3.0], noise_variance=1.0),
    ],
)
def test_dataset_validation(kw):
    with pytest.raises(ValueError):
        Dataset(**kw)


def test_dataset_checked_against_network(ex1):
    with pytest.raises(ValueError):
        Posterior(ex1, Dataset([1.0, 2.0], [1.0, 2.0, 3.0, 4.0], 1.0))
