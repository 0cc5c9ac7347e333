import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st
from numpy.testing import assert_allclose
from scipy.stats import multivariate_normal

from config.settings import settings
from core.lgss import (
    GaussianMoments,
    LgssModel,
    joint_gaussian_oracle,
    kalman_filter,
    kalman_smoother,
    sample_conditional_trajectory,
)
from tests.oracles import random_lgss, random_spd
from utils.exceptions import DimensionMismatchError, SingularMatrixError, SizeGuardError
from utils.numerics import is_psd


def identity_model(num_stages=1, n=2, r_scale=1.0):
    return LgssModel(
        init=GaussianMoments(np.zeros(n), np.eye(n)),
        obs_matrices=np.stack([np.eye(n)] * num_stages),
        obs_offsets=np.zeros((num_stages, n)),
        obs_noise_covs=np.stack([r_scale * np.eye(n)] * num_stages),
        trans_matrices=np.stack([np.eye(n)] * (num_stages - 1)) if num_stages > 1 else np.zeros((0, n, n)),
        trans_offsets=np.zeros((num_stages - 1, n)),
        trans_noise_covs=np.stack([np.eye(n)] * (num_stages - 1)) if num_stages > 1 else np.zeros((0, n, n)),
    )


def test_one_step_symmetric_update():
    out = kalman_filter(identity_model(), np.zeros((1, 2)))
    assert_allclose(out.filtered[0].mean, 0.0, atol=1e-15)
    assert_allclose(out.filtered[0].cov, 0.5 * np.eye(2), rtol=1e-14)
    expected = multivariate_normal(mean=np.zeros(2), cov=2 * np.eye(2)).logpdf(np.zeros(2))
    assert out.log_increments[0] == pytest.approx(expected, abs=1e-14)


def test_uninformative_observations_leave_prediction_unchanged(rng):
    model = identity_model(num_stages=3, r_scale=1e12)
    out = kalman_filter(model, rng.normal(size=(3, 2)))
    for pred, filt in zip(out.predicted, out.filtered):
        assert_allclose(filt.mean, pred.mean, rtol=1e-5, atol=1e-5)
        assert_allclose(filt.cov, pred.cov, rtol=1e-5)


@hsettings(max_examples=20, deadline=None)
@given(
    seed=st.integers(0, 2 ** 32 - 1),
    num_stages=st.integers(1, 6),
    n=st.integers(1, 6),
    p=st.integers(1, 4),
)
def test_filter_and_smoother_match_joint_oracle(seed, num_stages, n, p):
    rng = np.random.default_rng(seed)
    model = random_lgss(rng, num_stages, n, p)
    y = rng.normal(size=(num_stages, p))

    filter_out = kalman_filter(model, y)
    smoothed = kalman_smoother(model, filter_out)
    oracle = joint_gaussian_oracle(model, y)

    assert filter_out.log_likelihood == pytest.approx(oracle.log_density, rel=1e-8, abs=1e-8)
    for ours, ref in zip(smoothed.smoothed, oracle.smoothed):
        assert_allclose(ours.mean, ref.mean, rtol=1e-8, atol=1e-8)
        assert_allclose(ours.cov, ref.cov, rtol=1e-8, atol=1e-8)
        assert ours.is_valid()


def test_smoothed_covariance_never_exceeds_filtered(rng):
    model = random_lgss(rng, 5, 3, 2)
    filter_out = kalman_filter(model, rng.normal(size=(5, 2)))
    smoothed = kalman_smoother(model, filter_out)
    for filt, smooth in zip(filter_out.filtered, smoothed.smoothed):
        assert is_psd(filt.cov - smooth.cov, rel_tol=1e-10)
    assert smoothed.smoothed[-1] is filter_out.filtered[-1]


def test_single_stage_smoother_is_the_filter(rng):
    model = random_lgss(rng, 1, 3, 2)
    filter_out = kalman_filter(model, rng.normal(size=(1, 2)))
    smoothed = kalman_smoother(model, filter_out)
    assert_allclose(smoothed.means[0], filter_out.filtered[0].mean)
    assert_allclose(smoothed.covs[0], filter_out.filtered[0].cov)


def test_independent_stages_receive_no_backward_information(rng):
    n, p, num_stages = 2, 2, 4
    base = random_lgss(rng, num_stages, n, p)
    model = LgssModel(
        init=base.init,
        obs_matrices=base.obs_matrices,
        obs_offsets=base.obs_offsets,
        obs_noise_covs=base.obs_noise_covs,
        trans_matrices=np.zeros((num_stages - 1, n, n)),
        trans_offsets=rng.normal(size=(num_stages - 1, n)),
        trans_noise_covs=base.trans_noise_covs,
    )
    filter_out = kalman_filter(model, rng.normal(size=(num_stages, p)))
    smoothed = kalman_smoother(model, filter_out)
    for filt, smooth in zip(filter_out.filtered, smoothed.smoothed):
        assert_allclose(smooth.mean, filt.mean, atol=1e-10)
        assert_allclose(smooth.cov, filt.cov, atol=1e-10)


def noiseless_model(rng, num_stages=3, n=2):
    """Deterministic dynamics observed almost exactly."""
    return LgssModel(
        init=GaussianMoments(rng.normal(size=n), random_spd(rng, n)),
        obs_matrices=np.stack([np.eye(n) + 0.1 * rng.normal(size=(n, n)) for _ in range(num_stages)]),
        obs_offsets=rng.normal(size=(num_stages, n)),
        obs_noise_covs=np.stack([1e-10 * np.eye(n)] * num_stages),
        trans_matrices=np.stack([np.eye(n) + 0.1 * rng.normal(size=(n, n)) for _ in range(num_stages - 1)]),
        trans_offsets=rng.normal(size=(num_stages - 1, n)),
        trans_noise_covs=np.zeros((num_stages - 1, n, n)),
    )


def _noiseless_path(rng, model):
    x = model.init.mean + rng.normal(size=model.state_dim)
    path = [x]
    for k in range(model.num_stages - 1):
        path.append(model.trans_matrices[k] @ path[-1] + model.trans_offsets[k])
    path = np.stack(path)
    y = np.stack([model.obs_matrices[k] @ path[k] + model.obs_offsets[k] for k in range(model.num_stages)])
    return path, y


def test_degenerate_limit_recovers_noiseless_trajectory(rng):
    model = noiseless_model(rng)
    path, y = _noiseless_path(rng, model)
    oracle = joint_gaussian_oracle(model, y)
    assert_allclose(np.stack([m.mean for m in oracle.smoothed]), path, atol=1e-4)

    sample = sample_conditional_trajectory(model, y, seed=1)
    smoothed = kalman_smoother(model, kalman_filter(model, y))
    assert_allclose(sample, smoothed.means, atol=1e-4)


def test_oracle_handles_exact_observations_of_a_frozen_state():
    model = identity_model(num_stages=3, r_scale=1e-10)
    model = LgssModel(
        init=model.init,
        obs_matrices=model.obs_matrices,
        obs_offsets=model.obs_offsets,
        obs_noise_covs=model.obs_noise_covs,
        trans_matrices=model.trans_matrices,
        trans_offsets=model.trans_offsets,
        trans_noise_covs=np.zeros((2, 2, 2)),
    )
    y = np.ones((3, 2))
    oracle = joint_gaussian_oracle(model, y)
    assert np.isfinite(oracle.log_density)
    assert oracle.log_density == pytest.approx(kalman_filter(model, y).log_likelihood, abs=1e-2)
    for moments in oracle.smoothed:
        assert_allclose(moments.mean, 1.0, atol=1e-4)


def test_single_stage_random_model(rng):
    model = random_lgss(rng, 1, 3, 2)
    assert model.trans_matrices.shape == (0, 3, 3)
    assert model.trans_noise_covs.shape == (0, 3, 3)
    y = rng.normal(size=(1, 2))
    assert kalman_filter(model, y).log_likelihood == pytest.approx(joint_gaussian_oracle(model, y).log_density, rel=1e-8, abs=1e-8)


def test_trajectory_draws_match_smoother_moments():
    rng = np.random.default_rng(7)
    model = random_lgss(rng, 2, 1, 1)
    y = rng.normal(size=(2, 1))
    filter_out = kalman_filter(model, y)
    smoothed = kalman_smoother(model, filter_out)

    draws_rng = np.random.default_rng(11)
    draws = np.stack([
        sample_conditional_trajectory(model, y, draws_rng, filter_out=filter_out) for _ in range(10_000)
    ])[:, :, 0]
    mean, var = smoothed.means[:, 0], smoothed.covs[:, 0, 0]
    count = draws.shape[0]
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 4 * np.sqrt(var / count))
    assert np.all(np.abs(draws.var(axis=0) - var) < 4 * var * np.sqrt(2.0 / count))


def test_trajectory_sampling_is_deterministic(rng):
    model = random_lgss(rng, 3, 2, 2)
    y = rng.normal(size=(3, 2))
    first = sample_conditional_trajectory(model, y, seed=42)
    second = sample_conditional_trajectory(model, y, seed=42)
    assert np.array_equal(first, second)
    assert first.shape == (3, 2)


def test_observation_shape_is_checked(rng):
    model = random_lgss(rng, 3, 2, 2)
    with pytest.raises(DimensionMismatchError):
        kalman_filter(model, np.zeros((2, 2)))
    with pytest.raises(DimensionMismatchError):
        kalman_filter(model, np.zeros((3, 3)))


def test_inconsistent_model_is_rejected(rng):
    with pytest.raises(DimensionMismatchError):
        LgssModel(
            init=GaussianMoments(np.zeros(2), np.eye(2)),
            obs_matrices=np.zeros((2, 1, 2)),
            obs_offsets=np.zeros((2, 1)),
            obs_noise_covs=np.ones((2, 1, 1)),
            trans_matrices=np.zeros((1, 3, 3)),
            trans_offsets=np.zeros((1, 2)),
            trans_noise_covs=np.zeros((1, 2, 2)),
        )


def test_singular_innovation_names_the_stage():
    model = LgssModel(
        init=GaussianMoments(np.zeros(2), np.eye(2)),
        obs_matrices=np.array([[[1.0, 0.0], [1.0, 0.0]]]),
        obs_offsets=np.zeros((1, 2)),
        obs_noise_covs=np.zeros((1, 2, 2)),
        trans_matrices=np.zeros((0, 2, 2)),
        trans_offsets=np.zeros((0, 2)),
        trans_noise_covs=np.zeros((0, 2, 2)),
    )
    with pytest.raises(SingularMatrixError) as excinfo:
        kalman_filter(model, np.zeros((1, 2)))
    assert excinfo.value.stage == 0
    assert excinfo.value.code == "SINGULAR_MATRIX"


def test_oracle_size_guard(rng, monkeypatch):
    monkeypatch.setattr(settings, "ORACLE_MAX_DIM", 5)
    model = random_lgss(rng, 3, 2, 1)
    with pytest.raises(SizeGuardError):
        joint_gaussian_oracle(model, np.zeros((3, 1)))
