import numpy as np
import pytest

from exposure_panel.causal_designs import DidSpec, fit_did, fit_interaction_fe
from exposure_panel.exceptions import PermutationError
from exposure_panel.inference_permutation import (
    CROSS_ENTITY, CROSS_OBSERVATION, permutation_p_value, placebo_interaction_test,
    randomization_inference, tail_summary,
)

BARE_SPEC = DidSpec(confounders=(), controls=())


def test_p_value_counts_ties_as_extreme():
    placebos = [0.5] * 498 + [1.0, -1.0]
    assert permutation_p_value(1.0, placebos) == (pytest.approx(0.004), 2)
    p, count = permutation_p_value(1.0, placebos, add_one=True)
    assert p == pytest.approx(3 / 501)
    assert count == 2


def test_p_value_needs_draws():
    with pytest.raises(PermutationError):
        permutation_p_value(0.1, [])


def test_exhaustive_three_entity_enumeration(toy_panel):
    report = randomization_inference(toy_panel, BARE_SPEC, exhaustive=True)
    assert report.B == 6
    assert report.exhaustive
    assert report.observed_coefficient == pytest.approx(fit_did(toy_panel, BARE_SPEC).coefficient('genai_2018:post'))
    # identity and full reversal are the only draws as large as the observed effect
    assert report.n_extreme == 2
    assert report.p_two_sided == pytest.approx(1 / 3)
    assert min(report.placebo_coefficients) == pytest.approx(report.observed_coefficient)
    assert max(report.placebo_coefficients) == pytest.approx(-report.observed_coefficient)


def test_exhaustive_limited_to_small_panels(did_panel):
    panel, _ = did_panel
    with pytest.raises(PermutationError):
        randomization_inference(panel, exhaustive=True)


def test_permutation_count_must_be_positive(toy_panel):
    with pytest.raises(PermutationError):
        randomization_inference(toy_panel, BARE_SPEC, B=0)


def test_cross_entity_draws_do_not_depend_on_threads(did_panel):
    panel, _ = did_panel
    serial = randomization_inference(panel, B=20, seed=42, threads=1)
    parallel = randomization_inference(panel, B=20, seed=42, threads=4)
    assert serial.placebo_coefficients == parallel.placebo_coefficients
    assert serial.p_two_sided == parallel.p_two_sided
    other = randomization_inference(panel, B=20, seed=43, threads=1)
    assert other.placebo_coefficients != serial.placebo_coefficients


def test_cross_entity_observed_matches_fit(did_panel):
    panel, _ = did_panel
    report = randomization_inference(panel, B=10, seed=1)
    assert report.permutation_scheme == CROSS_ENTITY
    assert report.coefficient == 'genai_2018:post'
    assert report.observed_coefficient == pytest.approx(fit_did(panel).coefficient('genai_2018:post'), rel=1e-8)
    assert len(report.to_frame()) == 10


def test_placebo_interaction(interaction_panel):
    panel, _ = interaction_panel
    report = placebo_interaction_test(panel, 'education', B=20, seed=3, add_one=True)
    assert report.permutation_scheme == CROSS_OBSERVATION
    assert report.coefficient == 'genai:education'
    assert report.observed_coefficient == pytest.approx(
        fit_interaction_fe(panel, 'education').coefficient('genai:education'), rel=1e-8)
    assert report.n_extreme == 0
    assert report.p_two_sided == pytest.approx(1 / 21)
    assert report.to_dict()['p_convention'] == '(count+1)/(B+1)'


def test_placebo_interaction_needs_moderator(interaction_panel):
    panel, _ = interaction_panel
    with pytest.raises(PermutationError):
        placebo_interaction_test(panel, None, B=5)


def test_tail_summary(interaction_panel):
    panel, _ = interaction_panel
    report = placebo_interaction_test(panel, 'education', B=30, seed=0)
    summary = tail_summary(report)
    assert summary['q025'] <= summary['mean'] <= summary['q975']
    assert summary['share_below_observed'] == pytest.approx(
        np.mean(np.asarray(report.placebo_coefficients) <= report.observed_coefficient))
