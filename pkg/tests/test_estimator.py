import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.estimator import (
    load_summary,
    posterior_samples,
    rb_cov,
    rb_cov_parts,
    rb_mean,
    save_summary,
    smooth_cloud,
    summarize_posterior,
)
from core.lgss import GaussianMoments, SmootherOutput
from core.smc import InversionContext, ParticleCloud, smc_run
from core.surrogate import SurrogateModel
from models.schemas import SummaryHeader
from tests.oracles import rb_quadrature, rho_posterior_quadrature, tiny_context, tiny_prior
from utils.exceptions import ConfigurationError, DimensionMismatchError
from utils.numerics import is_psd


def smoother(means, covs) -> SmootherOutput:
    return SmootherOutput([GaussianMoments(np.asarray(m, float), np.asarray(c, float)) for m, c in zip(means, covs)])


def cloud_of(values) -> ParticleCloud:
    particles = np.asarray(values, dtype=float).reshape(len(values), -1)
    return ParticleCloud(particles, np.zeros(len(values)), np.zeros((len(values), 1)))


def test_single_particle_is_its_own_smoother():
    s = smoother([[1.0, 2.0], [3.0, 4.0]], [np.eye(2), 2 * np.eye(2)])
    parts = rb_cov_parts([s])
    assert_allclose(rb_mean([s]), s.means)
    assert np.all(parts.between == 0.0)
    assert_allclose(parts.total, s.covs)


def test_identical_particles_have_no_between_term(rng):
    s = smoother(rng.normal(size=(3, 2)), [np.eye(2)] * 3)
    parts = rb_cov_parts([s, s, s])
    assert_allclose(parts.between, 0.0, atol=1e-15)
    assert_allclose(rb_mean([s, s, s]), s.means)


def test_two_particle_spread():
    a, b = np.array([1.0, -1.0]), np.array([3.0, 2.0])
    cov = np.array([[2.0, 0.3], [0.3, 1.0]])
    parts = rb_cov_parts([smoother([a], [cov]), smoother([b], [cov])])
    assert_allclose(parts.between[0], np.outer(a - b, a - b) / 4)
    assert_allclose(parts.within[0], cov)


def test_total_dominates_within(rng):
    outputs = [smoother(rng.normal(size=(2, 3)), [np.eye(3)] * 2) for _ in range(6)]
    parts = rb_cov_parts(outputs)
    for total, within in zip(parts.total, parts.within):
        assert is_psd(total - within)
    assert_allclose(rb_cov(outputs), parts.total)


def test_weighted_mean_uses_normalized_weights():
    outputs = [smoother([[0.0]], [[[1.0]]]), smoother([[4.0]], [[[1.0]]])]
    assert_allclose(rb_mean(outputs, weights=np.array([3.0, 1.0])), [[1.0]])


def test_empty_cloud():
    with pytest.raises(DimensionMismatchError):
        rb_mean([])


def test_summary_sigma_is_the_covariance_diagonal():
    context = tiny_context(mode="scalar")
    summary = summarize_posterior(cloud_of([0.2, 0.5, 0.9]), context, retain_covariances=True)
    n, K = context.prior.layout.state_dim, context.num_stages
    assert summary.xhat.shape == summary.sigma_hat.shape == (n, K)
    assert summary.covariances.shape == (K, n, n)
    assert_allclose(summary.sigma_hat ** 2, np.diagonal(summary.covariances, axis1=1, axis2=2).T, rtol=1e-12)


def test_cached_filter_outputs_give_the_same_smoother():
    context = tiny_context(mode="scalar")
    result = smc_run(context, "data_tempered", n_particles=5, seed=3)
    cached = smooth_cloud(result.cloud, context)
    result.cloud.filter_outputs = []
    fresh = smooth_cloud(result.cloud, context)
    for a, b in zip(cached, fresh):
        assert_allclose(a.means, b.means, rtol=1e-12)


def exactly_observed_context(num_freqs: int = 3) -> InversionContext:
    """Square invertible observation matrices and negligible noise."""
    prior = tiny_prior(num_freqs)
    n = prior.layout.state_dim
    rng = np.random.default_rng(12)
    obs = np.stack([np.eye(n) + 0.2 * rng.normal(size=(n, n)) for _ in range(num_freqs)])
    noise_std = 1e-6
    surrogate = SurrogateModel(obs, np.zeros((num_freqs, n)), np.stack([noise_std ** 2 * np.eye(n)] * num_freqs), noise_std)
    return InversionContext(prior, surrogate, rng.normal(size=(num_freqs, n)), "scalar")


def test_draws_collapse_when_the_state_is_observed_exactly():
    context = exactly_observed_context()
    cloud = cloud_of([1.0, 1.0])
    summary = summarize_posterior(cloud, context)
    draws = posterior_samples(cloud, context, count=5, seed=0)
    for draw in draws:
        assert_allclose(draw, summary.xhat.T, atol=1e-4)


def test_draws_match_the_rao_blackwellized_moments():
    context = tiny_context(mode="scalar")
    cloud = cloud_of([0.1, 0.6, 0.95])
    summary = summarize_posterior(cloud, context)
    count = 10_000
    draws = posterior_samples(cloud, context, count=count, seed=8)
    assert draws.shape == (count, context.num_stages, context.prior.layout.state_dim)
    mean = draws.mean(axis=0).T
    assert np.all(np.abs(mean - summary.xhat) < 4 * summary.sigma_hat / np.sqrt(count))
    assert_allclose(draws.std(axis=0).T, summary.sigma_hat, rtol=0.05)


def test_sample_count_must_be_positive(scalar_context):
    with pytest.raises(ConfigurationError):
        posterior_samples(cloud_of([0.5]), scalar_context, count=0)


def test_summary_files(tmp_path):
    context = tiny_context(mode="scalar")
    summary = summarize_posterior(cloud_of([0.3, 0.7]), context, retain_covariances=True)
    header = SummaryHeader(
        num_zones=context.prior.layout.num_zones,
        state_dim=context.prior.layout.state_dim,
        frequencies=context.prior.frequencies.values,
        n_particles=2,
        rho_mode="scalar",
        scheme="annealed",
        seed=1,
    )
    save_summary(tmp_path, summary, header)
    loaded_header, loaded = load_summary(tmp_path)
    assert loaded_header.has_covariances
    assert np.array_equal(loaded.xhat, summary.xhat)
    assert np.array_equal(loaded.sigma_hat, summary.sigma_hat)
    assert np.array_equal(loaded.covariances, summary.covariances)
    assert loaded.particles.shape == (2, 1)


@pytest.mark.slow
def test_rao_blackwellized_mean_matches_quadrature():
    context = tiny_context(mode="scalar", truth_rho=0.7, noise_std=0.2)
    quadrature = rho_posterior_quadrature(context)
    mean, cov = rb_quadrature(context, quadrature)
    result = smc_run(context, "annealed", n_particles=500, seed=21)
    summary = summarize_posterior(result.cloud, context)
    z = (summary.xhat.T - mean) / np.sqrt(np.diagonal(cov, axis1=1, axis2=2))
    assert np.max(np.abs(z)) < 4.0
    assert_allclose(summary.sigma_hat.T, np.sqrt(np.diagonal(cov, axis1=1, axis2=2)), rtol=0.1)
