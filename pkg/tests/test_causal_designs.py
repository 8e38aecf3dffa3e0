import math
from datetime import date

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from exposure_panel.audit import AuditLog
from exposure_panel.causal_designs import (
    DidSpec, EventStudySpec, InteractionSpec, ShockDefinition, binned_scatter, build_confounder_exposure,
    build_did_design, effect_size, exposure_terciles, fit_did, fit_event_study, fit_interaction_fe, fit_triple_did,
    group_trajectories, marginal_effect_profile, skill_wage_decoupling, triple_terms,
)
from exposure_panel.exceptions import SpecificationError
from exposure_panel.panel_core import PanelDataset
from exposure_panel.synthetic_oracle import SyntheticSpec, gen_did_panel


def test_did_recovers_planted_effect(did_panel):
    panel, truth = did_panel
    fit = fit_did(panel)
    beta = fit.coefficient('genai_2018:post')
    assert abs(beta - truth.planted['beta_did']) < 4 * fit.std_error('genai_2018:post')
    assert fit.n_obs == 80 * 5
    assert fit.n_clusters == 80
    assert fit.df_inference == 79
    assert fit.names[:4] == ('genai_2018:post', 'techreg_2018:post', 'covid_2018:post', 'realestate_2018:post')


def test_did_cluster_and_robust_errors_differ(did_panel):
    panel, _ = did_panel
    clustered = fit_did(panel)
    robust = fit_did(panel, DidSpec(cov_type='hc1'))
    assert clustered.coefficient('genai_2018:post') == pytest.approx(robust.coefficient('genai_2018:post'))
    assert clustered.std_error('genai_2018:post') != pytest.approx(robust.std_error('genai_2018:post'))


def test_effect_size():
    assert effect_size(-0.14) == pytest.approx(-13.06, abs=0.01)
    assert effect_size(-0.193) == pytest.approx(-17.55, abs=0.01)
    assert effect_size(0.0) == 0.0
    with pytest.raises(SpecificationError):
        effect_size(math.nan)


def test_did_spec_validation():
    with pytest.raises(SpecificationError):
        DidSpec(window=(2018, 2024))
    with pytest.raises(SpecificationError):
        DidSpec(post_years=(2020, 2021))
    with pytest.raises(SpecificationError):
        DidSpec(post_years=(2025,))
    with pytest.raises(SpecificationError):
        EventStudySpec(base_year=2023)


def test_missing_variable_is_reported(did_panel):
    panel, _ = did_panel
    with pytest.raises(SpecificationError) as info:
        fit_did(panel, DidSpec(controls=('absent',)))
    assert info.value.details['missing'] == ['absent']


def test_incomplete_rows_are_dropped_and_audited(did_panel):
    panel, _ = did_panel
    frame = panel.frame.copy()
    frame.loc[(frame['entity_id'] == frame['entity_id'].iloc[0]) & (frame['year'] == 2021), 'nightlight'] = np.nan
    audit = AuditLog()
    design = build_did_design(PanelDataset.from_frame(frame), DidSpec(), audit)
    assert design.n_obs == 80 * 5 - 1
    assert audit.count('did_sample', 'incomplete_row') == 1


def test_event_study_pins_base_year(did_panel):
    panel, truth = did_panel
    result = fit_event_study(panel)
    assert [p.year for p in result.points] == [2020, 2021, 2022, 2023, 2024]
    base = result.points[2]
    assert base.is_base and base.coef == 0.0 and base.std_err == 0.0
    post = result.points[3]
    assert abs(post.coef - truth.planted['beta_did']) < 4 * post.std_err
    assert post.ci_lower < post.coef < post.ci_upper
    assert result.pretrend.names == ('genai_2018:y2020', 'genai_2018:y2021')
    assert result.pretrend.dof == 2
    assert len(result.to_frame()) == 5


def test_pretrend_test_detects_planted_trend():
    panel, _ = gen_did_panel(SyntheticSpec(n_entities=200, pretrend_slope=0.1, seed=3))
    result = fit_event_study(panel)
    assert result.pretrend.p_value < 0.01
    chi2 = fit_event_study(panel, wald_form='chi2').pretrend
    assert chi2.statistic == pytest.approx(2 * result.pretrend.statistic)


def test_triple_terms():
    spec = DidSpec()
    assert triple_terms(spec, 'education_2018') == [
        'genai_2018:post', 'education_2018:post', 'genai_2018:education_2018:post']
    assert triple_terms(spec, 'genai_2018') == ['genai_2018:post', 'genai_2018:genai_2018:post']


def test_triple_did_recovers_moderation():
    panel, truth = gen_did_panel(SyntheticSpec(n_entities=200, triple_beta3=-0.1, seed=5))
    fit = fit_triple_did(panel, DidSpec(), 'education_2018')
    term = 'genai_2018:education_2018:post'
    assert abs(fit.coefficient(term) - truth.planted['triple_beta3']) < 4 * fit.std_error(term)


def test_quadratic_triple_did_drops_duplicate_term(did_panel):
    panel, _ = did_panel
    fit = fit_triple_did(panel, DidSpec(), 'genai_2018')
    assert 'genai_2018:post' in fit.names
    assert 'genai_2018:genai_2018:post' in fit.names
    assert fit.names.count('genai_2018:post') == 1


def test_interaction_fe_recovers_planted_values(interaction_panel):
    panel, truth = interaction_panel
    fit = fit_interaction_fe(panel, 'education')
    for name, key in (('genai:education', 'interaction_beta3'), ('genai', 'beta_genai')):
        assert abs(fit.coefficient(name) - truth.planted[key]) < 4 * fit.std_error(name)


def test_interaction_baseline_has_no_product(interaction_panel):
    panel, _ = interaction_panel
    fit = fit_interaction_fe(panel, None)
    assert fit.names == ('genai', 'education', 'heat', 'ln_population', 'nightlight',
                         'ndvi', 'poi_density', 'land_use_ratio')
    with pytest.raises(SpecificationError):
        InteractionSpec().moderator_column('income')


def test_marginal_effect_profile(interaction_panel):
    panel, _ = interaction_panel
    fit = fit_interaction_fe(panel, 'education')
    profile = marginal_effect_profile(fit, [-2.0, 0.0, 2.0])
    b1, b3 = fit.coefficient('genai'), fit.coefficient('genai:education')
    middle = profile.points[1]
    assert middle.effect == pytest.approx(b1)
    assert middle.std_err == pytest.approx(fit.std_error('genai'))
    assert profile.points[2].effect == pytest.approx(b1 + 2 * b3)
    assert profile.crossing == pytest.approx(-b1 / b3)
    frame = profile.to_frame()
    assert (frame['ci_lower'] < frame['effect']).all()


@pytest.fixture
def descriptive_panel():
    rows = []
    exposure = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
    for i, x in enumerate(exposure):
        for year in (2018, 2024):
            growth = 2.0 * x if year == 2024 else 0.0
            rows.append({'entity_id': f"N{i}", 'year': year, 'exposure': x,
                         'avg_wage': 1000.0 * (i + 1) * (1.1 if year == 2024 else 1.0),
                         'ln_avg_wage': 8.0 + growth, 'high_skill_share': 0.1 * i})
    return PanelDataset.from_frame(pd.DataFrame(rows))


def test_exposure_terciles(descriptive_panel):
    groups = exposure_terciles(descriptive_panel)
    assert groups == {'N0': 'low', 'N1': 'low', 'N2': 'medium', 'N3': 'medium', 'N4': 'high', 'N5': 'high'}


def test_terciles_need_three_entities():
    frame = pd.DataFrame({'entity_id': ['A', 'B'], 'year': [2018, 2018], 'exposure': [0.1, 0.2]})
    with pytest.raises(SpecificationError):
        exposure_terciles(PanelDataset.from_frame(frame))


def test_group_trajectories_and_decoupling(descriptive_panel):
    groups = exposure_terciles(descriptive_panel)
    table = group_trajectories(descriptive_panel, groups)
    assert list(table.columns) == ['year', 'low', 'medium', 'high']
    assert table.loc[table['year'] == 2018, 'low'].item() == pytest.approx(1500.0)
    summary = skill_wage_decoupling(descriptive_panel, groups)
    assert_allclose(summary.loc[summary['year'] == 2018, 'wage_index'], 100.0)
    assert_allclose(summary.loc[summary['year'] == 2024, 'wage_index'], 110.0)


def test_binned_scatter_slope(descriptive_panel):
    result = binned_scatter(descriptive_panel)
    assert result.slope == pytest.approx(2.0)
    assert result.n_obs == 6
    assert len(result.bins) == 6
    assert result.bins['n'].sum() == 6


def test_confounder_exposure_is_base_year_shock_share(posting):
    postings = [
        posting('p1', 'N1', industry_code='I'),
        posting('p2', 'N1', industry_code='A'),
        posting('p3', 'N1', industry_code='I'),
        posting('p4', 'N1', industry_code='I', posting_date=date(2019, 2, 1)),
        posting('p5', 'N2', industry_code='C'),
    ]
    audit = AuditLog()
    exposure = build_confounder_exposure(postings, ShockDefinition('TechReg', frozenset('i')), 2018,
                                         ['N1', 'N2', 'N3'], audit)
    assert exposure == {'N1': pytest.approx(2 / 3), 'N2': 0.0}
    assert audit.count('confounder', 'no_base_year_postings') == 1


def test_shock_definition_rejects_unknown_codes():
    with pytest.raises(SpecificationError):
        ShockDefinition('Mining', frozenset('Z'))
    with pytest.raises(SpecificationError):
        ShockDefinition('Empty', frozenset())
    assert ShockDefinition('COVID', frozenset('HG')).variable == 'covid_2018'
