import math

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose
import statsmodels.api as sm
from statsmodels.stats.outliers_influence import variance_inflation_factor

from exposure_panel.estimator_engine import (
    DesignMatrix, absorbed_parameter_counts, compute_vif, demean_columns, fit_2sls, fit_ols,
    fit_ols_dummies, group_codes, interaction_name, wald_joint, within_transform,
)
from exposure_panel.exceptions import (
    ConvergenceError, InsufficientClustersError, RankDeficiencyError, SpecificationError, WaldTestError,
)


def random_panel(seed, max_entities=50, max_years=7, drop=0.15):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, max_entities + 1))
    t = int(rng.integers(3, max_years + 1))
    entity = np.repeat(np.arange(n), t)
    year = np.tile(np.arange(2018, 2018 + t), n)
    keep = rng.random(n * t) > drop
    keep[::t] = True
    entity, year = entity[keep], year[keep]
    alpha = rng.standard_normal(n)[entity]
    gamma = rng.standard_normal(t)[year - 2018]
    x1 = rng.standard_normal(len(entity)) + 0.5 * alpha
    x2 = rng.standard_normal(len(entity)) - 0.3 * gamma
    y = 1.5 * x1 - 0.7 * x2 + alpha + gamma + rng.standard_normal(len(entity))
    return pd.DataFrame({'entity_id': [f"E{e:02d}" for e in entity], 'year': year,
                         'y': y, 'x1': x1, 'x2': x2})


@pytest.mark.parametrize('seed', range(50))
def test_absorption_matches_dummy_variables(seed):
    frame = random_panel(seed)
    design = DesignMatrix.from_frame(frame, 'y', ['x1', 'x2'])
    absorbed = fit_ols(design)
    dummies = fit_ols_dummies(design)
    assert_allclose(absorbed.params, dummies.params, rtol=0, atol=1e-8)


def test_absorbed_standard_errors_match_dummy_variables():
    frame = random_panel(3)
    design = DesignMatrix.from_frame(frame, 'y', ['x1', 'x2'])
    for cov_type in ('hc1', 'unadjusted'):
        assert_allclose(fit_ols(design, cov_type=cov_type).std_errors,
                        fit_ols_dummies(design, cov_type=cov_type).std_errors, rtol=1e-8)


@pytest.fixture
def sandwich_data():
    rng = np.random.default_rng(2024)
    x = rng.standard_normal(12)
    clusters = np.repeat(['g1', 'g2', 'g3', 'g4'], 3)
    y = 0.5 + 2.0 * x + rng.standard_normal(12) + np.repeat(rng.standard_normal(4), 3)
    X = np.column_stack([np.ones(12), x])
    return y, X, clusters


def test_cr1_matches_brute_force_sandwich(sandwich_data):
    y, X, clusters = sandwich_data
    fit = fit_ols(DesignMatrix(y=y, X=X, names=('const', 'x'), clusters=clusters))

    n, k = X.shape
    bread = np.linalg.inv(X.T @ X)
    beta = bread @ X.T @ y
    e = y - X @ beta
    meat = np.zeros((k, k))
    for g in np.unique(clusters):
        s = X[clusters == g].T @ e[clusters == g]
        meat += np.outer(s, s)
    G = 4
    expected = (G / (G - 1)) * ((n - 1) / (n - k)) * bread @ meat @ bread

    assert_allclose(fit.params, beta, atol=1e-12)
    assert_allclose(fit.cov, expected, rtol=0, atol=1e-10)
    assert fit.n_clusters == 4
    assert fit.df_inference == 3


def test_against_statsmodels(sandwich_data):
    y, X, clusters = sandwich_data
    design = DesignMatrix(y=y, X=X, names=('const', 'x'), clusters=clusters)
    codes, _ = group_codes(clusters)

    hc1 = sm.OLS(y, X).fit(cov_type='HC1')
    ours = fit_ols(design, cov_type='hc1')
    assert_allclose(ours.params, hc1.params, rtol=1e-10)
    assert_allclose(ours.std_errors, hc1.bse, rtol=1e-8)
    assert ours.r_squared == pytest.approx(hc1.rsquared)

    clustered = sm.OLS(y, X).fit(cov_type='cluster', cov_kwds={'groups': codes})
    assert_allclose(fit_ols(design).std_errors, clustered.bse, rtol=1e-8)

    classical = sm.OLS(y, X).fit()
    ours = fit_ols(design, cov_type='unadjusted')
    assert_allclose(ours.std_errors, classical.bse, rtol=1e-8)
    assert_allclose(ours.p_values, classical.pvalues, rtol=1e-6)


def test_single_cluster_is_rejected(sandwich_data):
    y, X, _ = sandwich_data
    design = DesignMatrix(y=y, X=X, names=('const', 'x'), clusters=np.zeros(12))
    with pytest.raises(InsufficientClustersError):
        fit_ols(design)


def test_collinear_column_is_named(sandwich_data):
    y, X, clusters = sandwich_data
    design = DesignMatrix(y=y, X=np.column_stack([X, 2 * X[:, 1]]), names=('const', 'x', 'x2'),
                          clusters=clusters)
    with pytest.raises(RankDeficiencyError) as info:
        fit_ols(design)
    assert len(info.value.dependent_columns) == 1
    assert info.value.dependent_columns[0] in ('x', 'x2')


def test_time_invariant_regressor_is_absorbed():
    frame = random_panel(1)
    frame['fixed'] = frame['entity_id'].str[1:].astype(float)
    with pytest.raises(RankDeficiencyError) as info:
        fit_ols(DesignMatrix.from_frame(frame, 'y', ['x1', 'fixed']))
    assert info.value.dependent_columns == ['fixed']


def test_design_rejects_absent_values():
    with pytest.raises(SpecificationError):
        DesignMatrix(y=[1.0, np.nan, 2.0], X=np.ones((3, 1)), names=('const',))


def test_convergence_error_carries_delta():
    frame = random_panel(5, drop=0.3)
    design = DesignMatrix.from_frame(frame, 'y', ['x1'])
    with pytest.raises(ConvergenceError) as info:
        within_transform(design, max_iter=1)
    assert info.value.final_delta > 0


def test_balanced_panel_demeans_in_two_sweeps():
    groups_e = (np.repeat(np.arange(4), 3), 4)
    groups_t = (np.tile(np.arange(3), 4), 3)
    values = np.arange(12, dtype=float) ** 1.5
    demeaned, sweeps = demean_columns(values, [groups_e, groups_t])
    assert sweeps <= 2
    table = demeaned.reshape(4, 3)
    assert_allclose(table.mean(axis=0), 0.0, atol=1e-12)
    assert_allclose(table.mean(axis=1), 0.0, atol=1e-12)


def test_absorbed_counts_two_way():
    frame = random_panel(4, drop=0.0)
    design = DesignMatrix.from_frame(frame, 'y', ['x1'])
    counts = absorbed_parameter_counts(design)
    assert counts['entity'] == frame['entity_id'].nunique()
    assert counts['time'] == frame['year'].nunique() - 1


def test_wald_single_coefficient_equals_t_squared(sandwich_data):
    y, X, clusters = sandwich_data
    fit = fit_ols(DesignMatrix(y=y, X=X, names=('const', 'x'), clusters=clusters))
    test = wald_joint(fit, ['x'])
    assert test.f_statistic == pytest.approx(fit.t_stats[1] ** 2)
    assert test.df_denom == 3
    chi2 = wald_joint(fit, ['x'], form='chi2')
    assert chi2.statistic == pytest.approx(chi2.chi2_statistic)
    with pytest.raises(WaldTestError):
        wald_joint(fit, ['missing'])


def test_normal_inference_has_infinite_df(sandwich_data):
    y, X, clusters = sandwich_data
    fit = fit_ols(DesignMatrix(y=y, X=X, names=('const', 'x'), clusters=clusters), inference='normal')
    assert math.isinf(fit.df_inference)
    assert fit.critical_value() == pytest.approx(1.959964, abs=1e-6)


@pytest.fixture
def iv_data():
    rng = np.random.default_rng(99)
    n = 400
    z = rng.standard_normal(n)
    w = rng.standard_normal(n)
    u = rng.standard_normal(n)
    x = 0.8 * z + 0.2 * w + u
    y = 1.0 - 0.5 * x + 0.3 * w + 0.7 * u + rng.standard_normal(n)
    return y, x, z, w


def test_instrument_equal_to_regressor_reproduces_ols(iv_data):
    y, x, _, w = iv_data
    X = np.column_stack([np.ones(len(y)), x, w])
    ols = fit_ols(DesignMatrix(y=y, X=X, names=('const', 'x', 'w')), cov_type='hc1')
    iv = fit_2sls(DesignMatrix(y=y, X=np.column_stack([X, x]), names=('const', 'x', 'w', 'z')),
                  endogenous='x', instrument='z', cov_type='hc1')
    assert_allclose(iv.params, ols.params, rtol=0, atol=1e-10)
    assert_allclose(iv.std_errors, ols.std_errors, rtol=0, atol=1e-10)


def test_2sls_rejects_self_instrument(iv_data):
    y, x, _, w = iv_data
    design = DesignMatrix(y=y, X=np.column_stack([np.ones(len(y)), x, w]), names=('const', 'x', 'w'))
    with pytest.raises(SpecificationError) as info:
        fit_2sls(design, endogenous='x', instrument='x')
    assert info.value.details == {'endogenous': 'x', 'instrument': 'x'}


def test_just_identified_2sls(iv_data):
    y, x, z, w = iv_data
    design = DesignMatrix(y=y, X=np.column_stack([np.ones(len(y)), x, w, z]), names=('const', 'x', 'w', 'z'))
    fit = fit_2sls(design, endogenous='x', instrument='z', cov_type='hc1')
    Z = np.column_stack([np.ones(len(y)), z, w])
    X = np.column_stack([np.ones(len(y)), x, w])
    beta = np.linalg.solve(Z.T @ X, Z.T @ y)
    assert_allclose(fit.params, beta[[0, 1, 2]], atol=1e-10)
    assert fit.names == ('const', 'x', 'w')
    assert fit.first_stage_f > 10
    assert fit.weak_instrument is False
    # structural residuals, not second-stage residuals
    assert_allclose(fit.residuals, y - X @ beta, atol=1e-10)


def test_reduced_form_is_first_stage_times_structural(iv_data):
    y, x, z, w = iv_data
    ones = np.ones(len(y))
    fit = fit_2sls(DesignMatrix(y=y, X=np.column_stack([ones, x, w, z]), names=('const', 'x', 'w', 'z')),
                   endogenous='x', instrument='z', cov_type='hc1')
    reduced = fit_ols(DesignMatrix(y=y, X=np.column_stack([ones, z, w]), names=('const', 'z', 'w')), cov_type='hc1')
    product = fit.first_stage.coefficient('z') * fit.coefficient('x')
    assert reduced.coefficient('z') == pytest.approx(product, abs=1e-10)


def test_weak_instrument_flag(iv_data):
    y, x, _, w = iv_data
    ones = np.ones(len(y))
    noise = np.random.default_rng(5).standard_normal(len(y))
    basis = np.column_stack([ones, x, w])
    orthogonal = noise - basis @ np.linalg.lstsq(basis, noise, rcond=None)[0]
    z = orthogonal + 0.01 * x
    design = DesignMatrix(y=y, X=np.column_stack([ones, x, w, z]), names=('const', 'x', 'w', 'z'))
    fit = fit_2sls(design, endogenous='x', instrument='z', cov_type='hc1')
    assert fit.first_stage_f < 10
    assert fit.weak_instrument


def test_vif_matches_statsmodels():
    rng = np.random.default_rng(17)
    a = rng.standard_normal(200)
    b = 0.8 * a + 0.6 * rng.standard_normal(200)
    c = rng.standard_normal(200)
    X = np.column_stack([np.ones(200), a, b, c])
    vif = compute_vif(DesignMatrix(y=rng.standard_normal(200), X=X, names=('const', 'a', 'b', 'c')))
    for i, name in enumerate(('a', 'b', 'c'), start=1):
        assert vif[name] == pytest.approx(variance_inflation_factor(X, i), rel=1e-8)


def test_vif_perfect_collinearity_is_infinite():
    rng = np.random.default_rng(3)
    a = rng.standard_normal(50)
    X = np.column_stack([a, 3 * a, rng.standard_normal(50)])
    vif = compute_vif(DesignMatrix(y=rng.standard_normal(50), X=X, names=('a', 'b', 'c')))
    assert math.isinf(vif['a']) and math.isinf(vif['b'])


def test_to_dict_records_dof():
    frame = random_panel(8, drop=0.0)
    fit = fit_ols(DesignMatrix.from_frame(frame, 'y', ['x1', 'x2']))
    out = fit.to_dict()
    assert set(out['coefficients']) == {'x1', 'x2'}
    assert out['dof']['params'] == 2
    assert out['dof']['absorbed']['entity'] == frame['entity_id'].nunique()
    assert out['n_clusters'] == frame['entity_id'].nunique()
    assert len(out['covariance']) == 2


def test_interaction_name():
    assert interaction_name('genai_2018', 'education_2018', 'post') == 'genai_2018:education_2018:post'
