from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from config.presets import PROPERTIES, get_perturbation
from core.armodel import prior_moments
from core.estimator import PosteriorSummary
from core.pipeline import InversionPipeline
from models.schemas import PerturbationShape
from services.scenario_service import (
    ScenarioService,
    build_scenario_spec,
    build_truth,
    draw_prior_truth,
    simulate_observations,
)
from services.study_service import (
    average_precision_report,
    cellwise_ratio,
    fraction_within_factor,
    rms_across_runs,
    run_average_precision_study,
    run_stochastic_variation_study,
    stochastic_variation_report,
    sub_seeds,
)
from utils.exceptions import ConfigurationError, DimensionMismatchError


def constant_shapes():
    return {prop: PerturbationShape(kind="constant", amplitude=1.0) for prop in PROPERTIES}


def offsets(spec):
    reference = spec.prior.reference_profiles()
    x_ref = np.concatenate([
        np.repeat(reference[p], spec.prior.layout.area_sizes, axis=0) for p in range(len(PROPERTIES))
    ])
    return build_truth(spec) - x_ref


class FrozenPipeline:
    """Returns the same summary whatever the seed."""

    def __init__(self, xhat, sigma):
        self.summary = PosteriorSummary(xhat=xhat, sigma_hat=sigma, particles=np.zeros((1, 1)))

    def run(self, observations, seed):
        return SimpleNamespace(summary=self.summary)


# truth

def test_zero_scale_factors_give_the_reference():
    spec = build_scenario_spec(desk=True, scale_factors=[0.0, 0.0])
    assert np.all(offsets(spec) == 0.0)


def test_constant_shape_offsets_each_area_by_its_scale_factor():
    spec = build_scenario_spec(desk=True, perturbations=constant_shapes())
    layout = spec.prior.layout
    expected = np.array([spec.scale_factors[a] for a in layout.zone_area] * len(PROPERTIES))
    assert_allclose(offsets(spec), np.repeat(expected[:, None], spec.prior.num_freqs, axis=1), atol=1e-12)


def test_full_scale_areas_differ_by_a_factor_sixteen():
    spec = build_scenario_spec(desk=False, perturbations=constant_shapes())
    delta = offsets(spec)
    zone_area = spec.prior.layout.zone_area
    first, last = zone_area.index(0), zone_area.index(4)
    assert_allclose(delta[last] / delta[first], 16.0, rtol=1e-9)


def test_truth_is_affine_in_the_scale_factors():
    spec = build_scenario_spec(desk=True)
    doubled = spec.model_copy(update={"scale_factors": [2 * c for c in spec.scale_factors]})
    assert_allclose(offsets(doubled), 2 * offsets(spec), rtol=1e-12, atol=1e-12)


def test_area_override_changes_only_that_area():
    base = build_scenario_spec(desk=True)
    override = build_scenario_spec(
        desk=True, area_perturbations={1: {"eps_re": PerturbationShape(**get_perturbation("oscillatory"))}},
    )
    changed = np.any(build_truth(base) != build_truth(override), axis=1)
    zone_area = base.prior.layout.zone_area
    assert changed.tolist() == [a == 1 for a in zone_area] + [False] * 3 * len(zone_area)


def test_perturbation_shapes():
    f = np.linspace(0.2, 8.0, 5)
    assert_allclose(PerturbationShape(kind="ramp", amplitude=2.0).evaluate(f), [0, 0.5, 1, 1.5, 2])
    assert_allclose(PerturbationShape(kind="step", step_at=4.0).evaluate(f), [0, 0, 1, 1, 1])
    composite = PerturbationShape(kind="composite", components=[
        PerturbationShape(kind="ramp"), PerturbationShape(kind="constant", amplitude=0.5),
    ])
    assert_allclose(composite.evaluate(f), [0.5, 0.75, 1.0, 1.25, 1.5])


def test_prior_truth_with_frozen_rho_keeps_its_standardized_value():
    spec = build_scenario_spec(desk=True, rho_mode="scalar")
    moments = prior_moments(spec.prior)
    x = draw_prior_truth(spec, rho=1.0, seed=3, moments=moments)
    assert x.shape == (spec.prior.layout.state_dim, spec.prior.num_freqs)
    z = [np.linalg.solve(moments.roots[k], x[:, k] - moments.means[k]) for k in range(spec.prior.num_freqs)]
    for zk in z[1:]:
        assert_allclose(zk, z[0], atol=1e-8)
    assert np.array_equal(x, draw_prior_truth(spec, rho=1.0, seed=3, moments=moments))


# observations

@pytest.fixture(scope="module")
def prepared():
    return ScenarioService().prepare(build_scenario_spec(desk=True))


def test_noise_free_observations(prepared):
    x = prepared.truth()
    y = simulate_observations(prepared.spec, x, prepared.forward, seed=1, noise_std=0.0)
    expected = np.stack([prepared.forward.evaluate(x[:, k], k) for k in range(prepared.spec.prior.num_freqs)])
    assert np.array_equal(y, expected)


def test_observation_noise_level(prepared):
    spec = prepared.spec.model_copy(update={"obs_dim": 2000})
    forward = ScenarioService().forward_model(spec)
    x = build_truth(spec)
    noisy = simulate_observations(spec, x, forward, seed=5, noise_std=0.1)
    clean = simulate_observations(spec, x, forward, noise_std=0.0)
    residual = (noisy - clean).ravel()
    assert residual.size >= 10_000
    assert residual.std() == pytest.approx(0.1, rel=0.03)


def test_observations_are_seeded(prepared):
    x = prepared.truth()
    assert np.array_equal(prepared.observations(x, seed=4), prepared.observations(x, seed=4))
    assert not np.array_equal(prepared.observations(x, seed=4), prepared.observations(x, seed=5))


def test_observation_dimension_checks(prepared):
    with pytest.raises(DimensionMismatchError):
        simulate_observations(prepared.spec, np.zeros((3, 3)), prepared.forward)
    other = ScenarioService().forward_model(build_scenario_spec(desk=False))
    with pytest.raises(DimensionMismatchError):
        simulate_observations(prepared.spec, prepared.truth(), other)


def test_full_scale_observation_dimension():
    spec = build_scenario_spec(desk=False)
    assert spec.obs_dim == 4 * 23
    assert spec.prior.layout.state_dim == 4 * 19


def test_given_surrogate_skips_training(prepared):
    again = ScenarioService().prepare(prepared.spec, surrogate=prepared.surrogate)
    assert again.training is None
    assert again.surrogate is prepared.surrogate


def test_default_training_size(prepared):
    assert prepared.training.num_samples == 10 * (prepared.spec.prior.layout.state_dim + 1)


# study statistics

def test_stochastic_report_on_a_hand_computed_case():
    xhats = np.array([[[1.0, 2.0], [3.0, 4.0]], [[3.0, 2.0], [3.0, 8.0]]])
    sigmas = np.array([[[1.0, 1.0], [2.0, 2.0]], [[1.0, 1.0], [2.0, 2.0]]])
    report = stochastic_variation_report(xhats, sigmas, seeds=[1, 2])
    assert report.rms_xhat == [[1.0, 0.0], [0.0, 2.0]]
    assert report.rms_sigma == [[0.0, 0.0], [0.0, 0.0]]
    assert report.mean_xhat == [[2.0, 2.0], [3.0, 6.0]]
    assert report.summary["mean_rms_xhat"] == pytest.approx(0.75)
    assert report.summary["max_rms_xhat"] == pytest.approx(2.0)
    # cellwise RMS / mean sigma: [[1, 0], [0, 1]]
    assert report.summary["mean_ratio_xhat"] == pytest.approx(0.5)
    assert report.summary["max_ratio_xhat"] == pytest.approx(1.0)
    assert report.summary["ratio_of_means_xhat"] == pytest.approx(0.75 / 1.5)


def test_precision_report_on_a_hand_computed_case():
    xhats = np.array([[[1.0, 0.0]], [[3.0, 0.0]]])
    sigmas = np.full((2, 1, 2), 2.0)
    truths = np.zeros((2, 1, 2))
    report = average_precision_report(xhats, sigmas, truths, baseline=np.array([[4.0, 4.0]]), seeds=[1, 2])
    assert_allclose(report.rmse, [[np.sqrt(5.0), 0.0]])
    assert_allclose(report.baseline_rmse, [[4.0, 4.0]])
    assert report.summary["fraction_within_factor_2"] == 0.5


def test_ratio_helpers():
    assert_allclose(cellwise_ratio(np.array([0.0, 1.0, 1.0]), np.array([0.0, 2.0, 0.0])), [0.0, 0.5, np.inf])
    assert fraction_within_factor(np.array([1.0, 3.0, 0.4]), np.array([1.0, 1.0, 1.0])) == pytest.approx(1 / 3)
    assert_allclose(rms_across_runs(np.array([[1.0], [3.0]])), [1.0])


def test_sub_seeds_are_stable_and_distinct():
    seeds = sub_seeds(19, 5)
    assert seeds == sub_seeds(19, 5)
    assert len(set(seeds)) == 5


def test_frozen_sampler_has_no_stochastic_variation(prepared):
    n, K = prepared.spec.prior.layout.state_dim, prepared.spec.prior.num_freqs
    stub = FrozenPipeline(np.ones((n, K)), np.full((n, K), 0.1))
    report = run_stochastic_variation_study(prepared.spec, repetitions=4, pipeline=stub, prepared=prepared)
    assert np.all(np.array(report.rms_xhat) == 0.0)
    assert np.all(np.array(report.rms_sigma) == 0.0)
    assert report.runs == 4


def test_studies_need_two_runs(prepared):
    with pytest.raises(ConfigurationError):
        run_stochastic_variation_study(prepared.spec, repetitions=1, prepared=prepared)
    with pytest.raises(ConfigurationError):
        run_average_precision_study(prepared.spec, num_datasets=1, prepared=prepared)


def test_precision_study_reports_the_prior_mean_baseline(prepared):
    spec = prepared.spec.model_copy(update={"truth_source": "prior"})
    prepared = replace(prepared, spec=spec)
    n, K = spec.prior.layout.state_dim, spec.prior.num_freqs
    stub = FrozenPipeline(np.zeros((n, K)), np.ones((n, K)))
    report = run_average_precision_study(spec, num_datasets=3, pipeline=stub, prepared=prepared)
    assert report.summary["mean_baseline_rmse"] > 0.0
    assert len(report.seeds) == 3


@pytest.mark.slow
def test_studies_are_deterministic(small_spec):
    spec = small_spec.model_copy(update={"rho_mode": "scalar"})
    first = run_stochastic_variation_study(spec, repetitions=2)
    second = run_stochastic_variation_study(spec, repetitions=2)
    assert first.model_dump() == second.model_dump()


@pytest.mark.slow
def test_repeated_inversions_vary_little_against_sigma(desk_spec):
    report = run_stochastic_variation_study(desk_spec, repetitions=10)
    assert report.summary["ratio_of_means_xhat"] < 0.1
    assert report.summary["ratio_of_means_sigma"] < 0.05


@pytest.mark.slow
def test_rmse_is_comparable_to_sigma(desk_spec):
    spec = desk_spec.model_copy(update={"truth_source": "prior"})
    prepared = ScenarioService().prepare(spec)
    report = run_average_precision_study(spec, num_datasets=10, prepared=prepared)
    assert report.summary["fraction_within_factor_2"] >= 0.9
    assert report.summary["mean_rmse"] <= report.summary["mean_baseline_rmse"]


@pytest.mark.slow
def test_irregular_area_gets_smaller_rho():
    smooth = PerturbationShape(kind="sinusoid", amplitude=1.0, cycles=0.5)
    rough = PerturbationShape(kind="sinusoid", amplitude=1.0, cycles=2.2, phase=0.3)
    spec = build_scenario_spec(
        desk=True,
        rho_mode="area",
        scale_factors=[2.0, 2.0],
        perturbations={prop: smooth for prop in PROPERTIES},
        area_perturbations={1: {prop: rough for prop in PROPERTIES}},
    )
    prepared = ScenarioService().prepare(spec)
    pipeline = InversionPipeline(spec.prior, prepared.surrogate, spec.scheme, spec.n_particles, spec.rho_mode)
    y = prepared.observations(prepared.truth(), spec.data_seed)
    for seed in sub_seeds(spec.smc_seed, 5):
        rho = pipeline.run(y, seed).smc.cloud.particles.mean(axis=0)
        assert rho[0] > rho[1]
