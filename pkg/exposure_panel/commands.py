#!/usr/bin/env python3
"""
Command handlers
One function per CLI subcommand. Each takes the resolved RunConfig, its
output directory and the run's AuditLog, writes its side tables and returns
the AnalysisReport.
"""

import logging
import math
import os
from dataclasses import asdict
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .audit import AuditLog
from .causal_designs import (
    DidSpec, EventStudySpec, InteractionSpec, attach_confounders, binned_scatter, build_did_design,
    build_interaction_design, build_triple_did_design, effect_size, exposure_terciles, fit_did,
    fit_event_study, fit_interaction_fe, fit_triple_did, group_trajectories, interaction_sample,
    marginal_effect_profile, skill_wage_decoupling, triple_terms,
)
from .config_manager import RunConfig
from .estimator_engine import DesignMatrix, FitResult, compute_vif, fit_ols
from .exceptions import DataPreparationError, ExposurePanelError, LayoutError
from .exposure_index import (
    build_exposure_table, expert_consistency, exposure_distribution, load_assessments, model_agreement,
    write_assessments,
)
from .inference_permutation import placebo_interaction_test, randomization_inference, tail_summary
from .panel_core import (
    PanelDataset, aggregate_neighborhood_year, dedupe_postings, load_postings, read_panel_csv,
    standardize, write_panel_csv, write_postings,
)
from .reporting import (
    AnalysisReport, atomic_write_text, column_from_fit, column_from_fit_dict, event_study_column, format_number,
    load_json, render_table, write_csv,
)
from .shift_share import (
    LongDifferenceSpec, bartik_event_study, build_long_differences, build_shift_share, fit_bartik_2sls,
    fit_reduced_form,
)
from .spatial_stats import (
    build_weights, global_moran, lattice_weights, lisa, local_sum_identity, read_edge_list, read_polygons,
    weights_from_edges,
)
from .synthetic_oracle import (
    SpatialBlock, SyntheticSpec, gen_did_panel, gen_interaction_panel, gen_iv_cross_section, gen_postings,
    gen_spatial_field, run_coverage,
)

logger = logging.getLogger(__name__)


def _report(config: RunConfig) -> AnalysisReport:
    return AnalysisReport(config.command, config.to_dict())


def _side(report: AnalysisReport, out_dir: str, name: str, frame: pd.DataFrame) -> str:
    write_csv(frame, os.path.join(out_dir, name))
    report.side_tables.append(name)
    return name


def _postings(path: str, audit: AuditLog):
    return dedupe_postings(load_postings(path, audit), audit)


def _did_spec(config: RunConfig, cls=DidSpec, **extra) -> DidSpec:
    return cls(
        outcome=config['outcome'], treatment=config['treatment'], treatment_year=config['treatment_year'],
        post_years=tuple(config['post_years']), window=tuple(config['window']),
        confounders=tuple(config['confounders']), controls=tuple(config['controls']),
        cov_type=config['cov_type'], inference=config['inference'], **extra,
    )


def _design_panel(config: RunConfig, audit: AuditLog) -> PanelDataset:
    """Panel for the DID family; absent confounder exposures are built from postings when given"""
    panel = read_panel_csv(config['panel'])
    absent = [name for name in config.get('confounders', []) if name not in panel.variables]
    if absent and config.get('postings'):
        logger.info(f"Building confounder exposures {absent} from {config['postings']}")
        panel = attach_confounders(panel, _postings(config['postings'], audit), year=config['treatment_year'],
                                   audit=audit)
    return panel


def _fit_footer(fit: FitResult) -> List[Tuple[str, str]]:
    return [
        ('Observations', format_number(fit.n_obs)),
        ('Neighborhoods', format_number(fit.n_entities)),
        ('R2', format_number(fit.r_squared)),
    ]


def _safe_vif(design: DesignMatrix) -> Optional[Dict[str, float]]:
    try:
        return compute_vif(design)
    except ExposurePanelError as e:
        logger.warning(f"VIF skipped: {e}")
        return None


# ---------------------------------------------------------------------------
# ingest / exposure
# ---------------------------------------------------------------------------

def _merge_controls(panel: PanelDataset, path: str) -> PanelDataset:
    controls = pd.read_csv(path, dtype={'entity_id': str}, encoding='utf-8')
    if not {'entity_id', 'year'} <= set(controls.columns):
        raise DataPreparationError(f"controls file {path} needs entity_id and year columns")
    if controls.duplicated(['entity_id', 'year']).any():
        raise DataPreparationError(f"controls file {path} repeats (entity_id, year) pairs")
    overlap = [c for c in controls.columns if c in panel.variables]
    if overlap:
        raise DataPreparationError(f"controls file {path} redefines panel variables {overlap}")
    controls['year'] = controls['year'].astype(int)
    merged = panel.frame.merge(controls, on=['entity_id', 'year'], how='left')
    logger.info(f"Merged {len(controls.columns) - 2} control variables from {path}")
    return PanelDataset.from_frame(merged, panel.metadata, panel.window)


def run_ingest(config: RunConfig, out_dir: str, audit: AuditLog) -> AnalysisReport:
    report = _report(config)
    loaded = load_postings(config['postings'], audit)
    postings = dedupe_postings(loaded, audit)
    neighborhoods = None
    if config.get('neighborhoods'):
        frame = pd.read_csv(config['neighborhoods'], dtype=str, keep_default_na=False, encoding='utf-8')
        if 'neighborhood_id' not in frame.columns:
            raise DataPreparationError(f"{config['neighborhoods']} needs a neighborhood_id column")
        neighborhoods = sorted(set(frame['neighborhood_id'].str.strip()) - {''})
    first, last = config['window']
    panel = aggregate_neighborhood_year(postings, neighborhoods, range(first, last + 1),
                                        config['index_scope'], config['wage_mode'], audit)
    panel = panel.with_variable('education', panel.values('avg_education_years'), units='years')
    panel = panel.with_variable('heat', panel.values('job_index'), units='index [0,1]')
    base_year = config['base_year']
    for name in ('education', 'heat'):
        panel = standardize(panel, name, scope='at-year', year=base_year, target=f"{name}_{base_year}")
    if config['confounders']:
        panel = attach_confounders(panel, postings, year=base_year, audit=audit)
    if config.get('controls_file'):
        panel = _merge_controls(panel, config['controls_file'])

    write_panel_csv(panel, os.path.join(out_dir, 'panel.csv'))
    report.side_tables.append('panel.csv')
    shares = panel.frame.groupby('year')['job_share'].sum()
    report.results = {
        'postings_loaded': len(loaded),
        'postings_kept': len(postings),
        'rows': len(panel.frame),
        'entities': len(panel.entities),
        'years': panel.years,
        'variables': panel.variables,
        'job_share_sum_by_year': {str(year): float(value) for year, value in shares.items()},
    }
    return report


def _expert_levels(path: str) -> Dict[str, str]:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    if not {'occupation_code', 'level'} <= set(frame.columns):
        raise DataPreparationError(f"expert label file {path} needs occupation_code and level columns")
    return dict(zip(frame['occupation_code'].str.strip(), frame['level'].str.strip().str.upper()))


def run_exposure(config: RunConfig, out_dir: str, audit: AuditLog) -> AnalysisReport:
    report = _report(config)
    assessments = load_assessments(config['assessments'])
    postings = _postings(config['postings'], audit)
    table = build_exposure_table(assessments, postings, config['level_weights'], audit)
    reference_year = config['reference_year']
    _side(report, out_dir, 'exposure_out.csv', table.to_frame(reference_year))
    _side(report, out_dir, 'exposure_distribution.csv', exposure_distribution(table))
    agreement = model_agreement(assessments, config['level_weights'])
    _side(report, out_dir, 'agreement.csv', agreement.rename_axis('model_id').reset_index())
    report.results = {
        'occupations_scored': len(table.occupation_scores),
        'neighborhood_years': len(table.neighborhood_exposure),
        'unscored_postings': table.unscored_postings,
        'level_weights': dict(sorted(table.weights.items())),
        'model_agreement': {
            a: {b: agreement.loc[a, b] for b in agreement.columns} for a in agreement.index
        },
    }
    if config.get('expert_levels'):
        report.results['expert_consistency'] = expert_consistency(assessments, _expert_levels(config['expert_levels']))

    if config.get('panel'):
        panel = read_panel_csv(config['panel'])
        exposure = [table.neighborhood_exposure.get((entity, int(year)), math.nan)
                    for entity, year in zip(panel.frame['entity_id'], panel.frame['year'])]
        panel = panel.with_variable('exposure', exposure, units='index [0,1]')
        panel = panel.with_variable('genai', exposure, units='index [0,1]')
        panel = standardize(panel, 'exposure', scope='at-year', year=reference_year,
                            target=f"genai_{reference_year}")
        write_panel_csv(panel, os.path.join(out_dir, 'panel.csv'))
        report.side_tables.append('panel.csv')
        report.results['descriptives'] = _descriptives(panel, reference_year, report, out_dir)
    return report


def _descriptives(panel: PanelDataset, year: int, report: AnalysisReport, out_dir: str) -> Dict:
    """Tercile trajectories, skill-wage decoupling and the binned growth scatter"""
    groups = exposure_terciles(panel, 'exposure', year)
    out = {'tercile_sizes': {label: sum(1 for g in groups.values() if g == label)
                             for label in sorted(set(groups.values()))}}
    if 'avg_wage' in panel.variables:
        _side(report, out_dir, 'trajectories.csv', group_trajectories(panel, groups, 'avg_wage'))
    if {'avg_wage', 'high_skill_share'} <= set(panel.variables):
        _side(report, out_dir, 'decoupling.csv', skill_wage_decoupling(panel, groups, year))
    if 'ln_avg_wage' in panel.variables and panel.years:
        scatter = binned_scatter(panel, 'exposure', 'ln_avg_wage', year, max(panel.years))
        _side(report, out_dir, 'binned_scatter.csv', scatter.bins)
        out['binned_scatter'] = {'slope': scatter.slope, 'std_err': scatter.std_err,
                                 'p_value': scatter.p_value, 'n_obs': scatter.n_obs}
    return out


# ---------------------------------------------------------------------------
# DID family
# ---------------------------------------------------------------------------

def run_did(config: RunConfig, out_dir: str, audit: AuditLog) -> AnalysisReport:
    report = _report(config)
    panel = _design_panel(config, audit)
    spec = _did_spec(config)
    fit = fit_did(panel, spec, audit)
    beta = fit.coefficient(spec.treatment_term)
    vif = _safe_vif(build_did_design(panel, spec))
    _side(report, out_dir, 'coefficients.csv', fit.summary_frame().rename_axis('term').reset_index())
    report.results = {
        'treatment_term': spec.treatment_term,
        'confounder_terms': spec.confounder_terms,
        'beta': beta,
        'effect_size_pct': effect_size(beta),
        'fit': fit.to_dict(),
    }
    report.diagnostics = {'vif': vif}
    column = column_from_fit(fit, 'DID', 'did', [spec.treatment_term, *spec.confounder_terms], _fit_footer(fit))
    report.tables['table2'] = render_table([column], 'table2')
    return report


def run_event_study(config: RunConfig, out_dir: str, audit: AuditLog) -> AnalysisReport:
    report = _report(config)
    panel = _design_panel(config, audit)
    spec = _did_spec(config, EventStudySpec, base_year=config['base_year'])
    result = fit_event_study(panel, spec, audit, config['wald_form'])
    frame = result.to_frame()
    _side(report, out_dir, 'event_study.csv', frame)
    points = [asdict(point) for point in result.points]
    report.results = {
        'base_year': spec.base_year,
        'points': points,
        'pretrend': None if result.pretrend is None else result.pretrend.to_dict(),
        'fit': result.fit.to_dict(include_cov=False),
    }
    report.tables['eventstudy'] = render_table([event_study_column(points)], 'eventstudy')
    return report


def run_permute(config: RunConfig, out_dir: str, audit: AuditLog) -> AnalysisReport:
    report = _report(config)
    panel = _design_panel(config, audit)
    if config['scheme'] == 'cross-entity':
        result = randomization_inference(panel, _did_spec(config), config['B'], config.seed, config.threads,
                                         config['add_one'], config['exhaustive'])
    else:
        spec = InteractionSpec(outcome=config['outcome'], cov_type=config['cov_type'],
                               inference=config['inference'])
        result = placebo_interaction_test(panel, config['moderator'], spec, config['B'], config.seed,
                                          config.threads, config['add_one'])
    _side(report, out_dir, 'placebo.csv', result.to_frame())
    report.results = result.to_dict()
    report.diagnostics = {'placebo_distribution': tail_summary(result)}
    return report


def run_triple_did(config: RunConfig, out_dir: str, audit: AuditLog) -> AnalysisReport:
    report = _report(config)
    panel = _design_panel(config, audit)
    spec = _did_spec(config)
    fits, columns, vifs = {}, [], {}
    for moderator in config['moderators']:
        fit = fit_triple_did(panel, spec, moderator, audit)
        fits[moderator] = fit.to_dict()
        vifs[moderator] = _safe_vif(build_triple_did_design(panel, spec, moderator))
        columns.append(column_from_fit(fit, moderator, 'triple-did', triple_terms(spec, moderator),
                                       _fit_footer(fit)))
    report.results = {'fits': fits}
    report.diagnostics = {'vif': vifs}
    report.tables['table2'] = render_table(columns, 'table2')
    return report


def run_fe_interact(config: RunConfig, out_dir: str, audit: AuditLog) -> AnalysisReport:
    report = _report(config)
    panel = read_panel_csv(config['panel'])
    spec = InteractionSpec(
        outcome=config['outcome'], exposure=config['exposure'], education=config['education'],
        heat=config['heat'], standardized_controls=tuple(config['standardized_controls']),
        raw_controls=tuple(config['raw_controls']), window=tuple(config['window']),
        cov_type=config['cov_type'], inference=config['inference'],
    )
    sample = interaction_sample(panel, spec)
    fits, vifs, profiles, placebos, columns = {}, {}, {}, {}, []
    for label in config['moderators']:
        moderator = None if label == 'none' else label
        fit = fit_interaction_fe(panel, moderator, spec, audit)
        fits[label] = fit.to_dict()
        vifs[label] = _safe_vif(build_interaction_design(panel, moderator, spec))
        columns.append(column_from_fit(fit, label, 'interaction', footer=_fit_footer(fit)))
        if moderator is None:
            continue
        values = sample[spec.moderator_column(moderator)]
        grid = np.linspace(values.min(), values.max(), config['grid_points'])
        profile = marginal_effect_profile(fit, grid, spec.exposure, spec.interaction_term(moderator))
        profiles[label] = {'crossing': profile.crossing}
        _side(report, out_dir, f"marginal_effects_{label}.csv", profile.to_frame())
        if config['placebo_B'] > 0:
            placebo = placebo_interaction_test(panel, moderator, spec, config['placebo_B'],
                                               config.seed, config.threads)
            placebos[label] = placebo.to_dict()
            _side(report, out_dir, f"placebo_{label}.csv", placebo.to_frame())
    report.results = {'fits': fits, 'marginal_effects': profiles, 'placebo': placebos}
    finite = [v for vif in vifs.values() if vif for v in vif.values() if math.isfinite(v)]
    report.diagnostics = {'vif': vifs, 'max_vif': max(finite) if finite else None}
    report.tables['table3'] = render_table(columns, 'table3')
    return report


# ---------------------------------------------------------------------------
# Shift-share
# ---------------------------------------------------------------------------

def run_bartik(config: RunConfig, out_dir: str, audit: AuditLog) -> AnalysisReport:
    report = _report(config)
    ld_spec = LongDifferenceSpec(
        outcome=config['outcome'], exposure=config['exposure_variable'], changes=tuple(config['changes']),
        levels=tuple(config['levels']), pre_years=tuple(config['pre_years']),
        post_years=tuple(config['post_years']),
    )
    panel = read_panel_csv(config['panel']) if config.get('panel') else None
    bartik_std = None
    if config.get('long_differences'):
        long_diffs = pd.read_csv(config['long_differences'], dtype={'entity_id': str}, encoding='utf-8')
    else:
        base = panel.frame.loc[panel.frame['year'] == config['base_year']]
        exposures = dict(zip(base['entity_id'], base[ld_spec.exposure].astype(float)))
        inputs = build_shift_share(_postings(config['postings'], audit), exposures, config['base_year'])
        bartik_frame = inputs.to_frame()
        _side(report, out_dir, 'bartik_out.csv', bartik_frame)
        bartik_std = dict(zip(bartik_frame['neighborhood_id'], bartik_frame['bartik_std']))
        long_diffs = build_long_differences(panel, ld_spec, bartik_std, audit)
        report.diagnostics['coverage_share_min'] = float(bartik_frame['coverage_share'].min())
    _side(report, out_dir, 'long_differences.csv', long_diffs)

    reduced = fit_reduced_form(long_diffs, ld_spec)
    structural = fit_bartik_2sls(long_diffs, ld_spec)
    ols_design = DesignMatrix(
        y=long_diffs[ld_spec.outcome_change].to_numpy(dtype=float),
        X=np.column_stack([np.ones(len(long_diffs))] + [long_diffs[name].to_numpy(dtype=float)
                                                        for name in (ld_spec.exposure_change, *ld_spec.controls)]),
        names=('const', ld_spec.exposure_change, *ld_spec.controls), outcome=ld_spec.outcome_change,
    )
    ols = fit_ols(ols_design, cov_type='hc1')
    first_coef = structural.first_stage.coefficient(ld_spec.instrument)
    report.results = {
        'reduced_form': reduced.to_dict(include_cov=False),
        'first_stage': structural.first_stage.to_dict(include_cov=False),
        'second_stage': structural.to_dict(include_cov=False),
        'ols': ols.to_dict(include_cov=False),
        'first_stage_f': structural.first_stage_f,
        'weak_instrument': structural.weak_instrument,
    }
    report.diagnostics['reduced_form_identity_gap'] = abs(
        reduced.coefficient(ld_spec.instrument) - first_coef * structural.coefficient(ld_spec.exposure_change))
    if config['event_study'] and panel is not None and bartik_std is not None:
        event_spec = EventStudySpec(window=tuple(config['event_window']), base_year=config['event_base_year'],
                                    post_years=tuple(config['post_years']))
        event = bartik_event_study(panel, bartik_std, event_spec)
        report.results['event_study'] = {
            'points': [asdict(point) for point in event.result.points],
            'pretrend': None if event.result.pretrend is None else event.result.pretrend.to_dict(),
            'caution': event.caution,
        }
        _side(report, out_dir, 'bartik_event_study.csv', event.result.to_frame())
    return report


# ---------------------------------------------------------------------------
# Spatial
# ---------------------------------------------------------------------------

def _spatial_values(config: RunConfig) -> Dict[str, float]:
    if config.get('values'):
        frame = pd.read_csv(config['values'], dtype={'unit_id': str}, encoding='utf-8')
        if not {'unit_id', 'value'} <= set(frame.columns):
            raise DataPreparationError(f"values file {config['values']} needs unit_id and value columns")
        return dict(zip(frame['unit_id'].str.strip(), frame['value'].astype(float)))
    panel = read_panel_csv(config['panel'])
    rows = panel.frame.loc[panel.frame['year'] == config['year']]
    if not len(rows):
        raise DataPreparationError(f"Panel has no rows in {config['year']}")
    return dict(zip(rows['entity_id'], rows[config['variable']].astype(float)))


def run_lisa(config: RunConfig, out_dir: str, audit: AuditLog) -> AnalysisReport:
    report = _report(config)
    values = _spatial_values(config)
    if config.get('edges'):
        weights = weights_from_edges(read_edge_list(config['edges']), sorted(values))
    elif config.get('polygons'):
        units, rings = read_polygons(config['polygons'])
        weights = build_weights(units, rings, scheme=config['scheme'], k=config['k'],
                                island_k=config['island_k'])
    else:
        rows, cols = config['lattice']
        weights = lattice_weights(rows, cols, 'queen' if config['scheme'] == 'queen' else 'rook')
    moran = global_moran(values, weights, config['permutations'], config.seed)
    result = lisa(values, weights, config['permutations'], config['alpha'], config.seed,
                  config.threads, config['fdr'])
    _side(report, out_dir, 'lisa_out.csv', result.to_frame())
    _side(report, out_dir, 'weights.csv', weights.to_frame())
    report.results = {
        'global_moran': moran.to_dict(),
        'counts': result.counts(),
        'local': {unit: {'local_i': i, 'pseudo_p': p, 'category': c}
                  for unit, i, p, c in zip(result.units, result.local_i, result.pseudo_p, result.categories)},
    }
    report.diagnostics = {
        'scheme': weights.scheme,
        'isolated_units': list(weights.isolated),
        'fallback_units': list(weights.fallback_units),
        'local_sum': float(np.sum(result.local_i)),
        'local_sum_expected': local_sum_identity(result, weights),
    }
    return report


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def _synthetic_spec(config: RunConfig) -> SyntheticSpec:
    return SyntheticSpec(
        n_entities=config['n_entities'], true_beta_did=config['true_beta_did'],
        pretrend_slope=config['pretrend_slope'], triple_beta3=config['triple_beta3'],
        interaction_beta3=config['interaction_beta3'], interaction_moderator=config['interaction_moderator'],
        first_stage_pi=config['first_stage_pi'], true_beta_iv=config['true_beta_iv'],
        iv_endogeneity=config['iv_endogeneity'], cluster_rho=config['cluster_rho'],
        noise_sd=config['noise_sd'], seed=config.seed,
    )


def default_blocks(rows: int, cols: int) -> Tuple[SpatialBlock, ...]:
    """A high block in the top-left and a low block in the bottom-right quarter"""
    r, c = rows // 2, cols // 2
    return (SpatialBlock(0, r, 0, c, 1.0), SpatialBlock(r, rows, c, cols, -1.0))


def run_simulate(config: RunConfig, out_dir: str, audit: AuditLog) -> AnalysisReport:
    report = _report(config)
    spec = _synthetic_spec(config)
    kind = config['kind']
    if kind == 'did':
        panel, truth = gen_did_panel(spec)
        write_panel_csv(panel, os.path.join(out_dir, 'panel.csv'))
        report.side_tables.append('panel.csv')
        report.results = {'truth': truth.to_dict(), 'rows': len(panel.frame)}
    elif kind == 'interaction':
        panel, truth = gen_interaction_panel(spec)
        write_panel_csv(panel, os.path.join(out_dir, 'panel.csv'))
        report.side_tables.append('panel.csv')
        report.results = {'truth': truth.to_dict(), 'rows': len(panel.frame)}
    elif kind == 'iv':
        table, truth = gen_iv_cross_section(spec)
        _side(report, out_dir, 'long_differences.csv', table)
        report.results = {'truth': truth.to_dict(), 'rows': len(table)}
    elif kind == 'spatial':
        rows, cols = config['lattice']
        spatial = gen_spatial_field(rows, cols, default_blocks(rows, cols), spec.noise_sd, spec.seed)
        _side(report, out_dir, 'values.csv', pd.DataFrame({
            'unit_id': list(spatial.units), 'value': spatial.values, 'planted': list(spatial.mask)}))
        edges = lattice_weights(rows, cols, 'queen').to_frame()[['unit_id', 'neighbor_id']]
        _side(report, out_dir, 'edges.csv', edges)
        report.results = {'planted': {unit: label for unit, label in zip(spatial.units, spatial.mask) if label}}
    elif kind == 'postings':
        postings, assessments = gen_postings(spec)
        write_postings(postings, os.path.join(out_dir, 'postings.csv'))
        write_assessments(assessments, os.path.join(out_dir, 'assessments.csv'))
        report.side_tables.extend(['postings.csv', 'assessments.csv'])
        report.results = {'postings': len(postings), 'assessments': len(assessments)}
    else:
        coverage = run_coverage(spec, config['estimator'], config['n_draws'], config['alpha'], config.threads)
        _side(report, out_dir, 'estimates.csv', pd.DataFrame({
            'draw': np.arange(len(coverage.estimates)), 'estimate': coverage.estimates}))
        report.results = coverage.to_dict()
    return report


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _earlier(out_root: str, command: str, required: bool = True) -> Optional[Dict]:
    path = os.path.join(out_root, command, 'report.json')
    if not os.path.exists(path):
        if required:
            raise LayoutError(f"No {command} report found at {path}; run {command} first",
                              {'missing_report': command})
        return None
    return load_json(path)


def run_report(config: RunConfig, out_dir: str, audit: AuditLog) -> AnalysisReport:
    """Merge earlier reports under the same --out into a text table layout"""
    report = _report(config)
    out_root = os.path.dirname(os.path.abspath(out_dir))
    layout, digits = config['layout'], config['digits']
    sources = {}
    if layout == 'table2':
        did = _earlier(out_root, 'did')
        sources['did'] = did['config']['config_hash']
        fit = did['results']['fit']
        term = did['results']['treatment_term']
        confounders = did['results'].get('confounder_terms', [])
        footer = [
            ('Observations', format_number(fit['n_obs'], digits)),
            ('Neighborhoods', format_number(fit['n_entities'], digits)),
            ('R2', format_number(fit['r_squared'], digits)),
        ]
        event = _earlier(out_root, 'event-study', required=False)
        if event is not None and event['results'].get('pretrend'):
            sources['event-study'] = event['config']['config_hash']
            footer.append(('Pre-trend joint test (p)', format_number(event['results']['pretrend']['p_value'], digits)))
        permute = _earlier(out_root, 'permute', required=False)
        if permute is not None and permute['results'].get('coefficient') == term:
            sources['permute'] = permute['config']['config_hash']
            footer.append(('Permutation p', format_number(permute['results']['p_two_sided'], digits)))
        columns = [column_from_fit_dict(fit, 'DID', 'did', [term, *confounders], footer)]
    elif layout == 'table3':
        fe = _earlier(out_root, 'fe-interact')
        sources['fe-interact'] = fe['config']['config_hash']
        columns = []
        for label, fit in fe['results']['fits'].items():
            footer = [('Observations', format_number(fit['n_obs'], digits)),
                      ('R2', format_number(fit['r_squared'], digits))]
            columns.append(column_from_fit_dict(fit, label, 'interaction', footer=footer))
    else:
        event = _earlier(out_root, 'event-study')
        sources['event-study'] = event['config']['config_hash']
        columns = [event_study_column(event['results']['points'])]
    text = render_table(columns, layout, digits)
    report.tables[layout] = text
    report.results = {'layout': layout, 'sources': sources, 'columns': [asdict(column) for column in columns]}
    path = os.path.join(out_dir, f"{layout}.txt")
    atomic_write_text(path, text)
    report.side_tables.append(f"{layout}.txt")
    return report


COMMAND_HANDLERS: Dict[str, Callable[[RunConfig, str, AuditLog], AnalysisReport]] = {
    'ingest': run_ingest,
    'exposure': run_exposure,
    'did': run_did,
    'event-study': run_event_study,
    'permute': run_permute,
    'bartik': run_bartik,
    'triple-did': run_triple_did,
    'fe-interact': run_fe_interact,
    'lisa': run_lisa,
    'simulate': run_simulate,
    'report': run_report,
}
