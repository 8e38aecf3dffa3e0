#!/usr/bin/env python3
"""
Causal Designs
Builds and fits the pre-determined DID, its event-study version, the
triple-DID mechanism tests and the interaction fixed-effects models, plus the
descriptive group outputs used alongside them.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .audit import AuditLog
from .estimator_engine import (
    DesignMatrix, FitResult, WaldTest, fit_ols, interaction_name, wald_joint,
)
from .exceptions import SpecificationError, StandardizationError
from .panel_core import INDUSTRY_CODES, PanelDataset, PostingRecord, attach_entity_values

logger = logging.getLogger(__name__)

DEFAULT_CONTROLS = ('ln_population', 'nightlight', 'ndvi', 'poi_density', 'land_use_ratio')
DEFAULT_CONFOUNDERS = ('techreg_2018', 'covid_2018', 'realestate_2018')
POST = 'post'


@dataclass(frozen=True)
class ShockDefinition:
    """A concurrent shock identified by the primary industries it hits"""

    name: str
    industry_codes: frozenset

    def __post_init__(self):
        codes = frozenset(code.strip().upper() for code in self.industry_codes)
        if not codes:
            raise SpecificationError(f"Shock {self.name!r} has no industry codes")
        unknown = sorted(codes - INDUSTRY_CODES)
        if unknown:
            raise SpecificationError(f"Shock {self.name!r} uses unknown industry codes {unknown}")
        object.__setattr__(self, 'industry_codes', codes)

    @property
    def variable(self) -> str:
        return f"{self.name.lower()}_2018"


DEFAULT_SHOCKS = (
    ShockDefinition('TechReg', frozenset('I')),
    ShockDefinition('COVID', frozenset('HG')),
    ShockDefinition('RealEstate', frozenset('KE')),
)


@dataclass(frozen=True)
class DidSpec:
    outcome: str = 'ln_avg_wage'
    treatment: str = 'genai_2018'
    treatment_year: int = 2018
    post_years: Tuple[int, ...] = (2023, 2024)
    window: Tuple[int, int] = (2020, 2024)
    confounders: Tuple[str, ...] = DEFAULT_CONFOUNDERS
    controls: Tuple[str, ...] = DEFAULT_CONTROLS
    cluster: str = 'entity_id'
    cov_type: str = 'cluster'
    inference: str = 't'

    def __post_init__(self):
        object.__setattr__(self, 'post_years', tuple(sorted(int(y) for y in self.post_years)))
        object.__setattr__(self, 'window', (int(self.window[0]), int(self.window[1])))
        object.__setattr__(self, 'confounders', tuple(self.confounders))
        object.__setattr__(self, 'controls', tuple(self.controls))
        errors = self._violations()
        if errors:
            raise SpecificationError('Invalid design specification: ' + '; '.join(errors), {'errors': errors})

    def _violations(self) -> List[str]:
        errors = []
        lo, hi = self.window
        if lo > hi:
            errors.append(f"window start {lo} after end {hi}")
        if self.treatment_year >= lo:
            errors.append(f"treatment year {self.treatment_year} must precede window start {lo}")
        if not self.post_years:
            errors.append('post_years is empty')
        outside = [y for y in self.post_years if not lo <= y <= hi]
        if outside:
            errors.append(f"post years {outside} outside window {lo}-{hi}")
        if self.post_years and min(self.post_years) == lo:
            errors.append('window has no pre-period')
        return errors

    @property
    def years(self) -> List[int]:
        return list(range(self.window[0], self.window[1] + 1))

    @property
    def treatment_term(self) -> str:
        return interaction_name(self.treatment, POST)

    @property
    def confounder_terms(self) -> List[str]:
        return [interaction_name(name, POST) for name in self.confounders]


@dataclass(frozen=True)
class EventStudySpec(DidSpec):
    base_year: int = 2022

    def _violations(self) -> List[str]:
        errors = super()._violations()
        lo, hi = self.window
        if not lo <= self.base_year <= hi:
            errors.append(f"base year {self.base_year} outside window {lo}-{hi}")
        if self.base_year in self.post_years:
            errors.append(f"base year {self.base_year} is a post year")
        return errors

    def event_term(self, year: int) -> str:
        return interaction_name(self.treatment, f"y{year}")

    @property
    def event_years(self) -> List[int]:
        return [year for year in self.years if year != self.base_year]

    @property
    def pre_years(self) -> List[int]:
        return [year for year in self.event_years if year < self.base_year]


# ---------------------------------------------------------------------------
# Pre-determined exposures
# ---------------------------------------------------------------------------

def build_confounder_exposure(postings: Iterable[PostingRecord], shock: ShockDefinition,
                              year: int = 2018, neighborhoods: Optional[Iterable[str]] = None,
                              audit: Optional[AuditLog] = None) -> Dict[str, float]:
    """
    Share of a neighborhood's base-year postings that fall in the shock industries

    Neighborhoods listed in `neighborhoods` without any base-year posting are
    absent from the result and noted in the audit log.
    """
    totals: Dict[str, int] = {}
    hits: Dict[str, int] = {}
    for record in postings:
        if record.year != year:
            continue
        nbhd = record.neighborhood_id
        totals[nbhd] = totals.get(nbhd, 0) + 1
        if record.industry_code in shock.industry_codes:
            hits[nbhd] = hits.get(nbhd, 0) + 1
    exposure = {nbhd: hits.get(nbhd, 0) / total for nbhd, total in sorted(totals.items())}
    if neighborhoods is not None and audit is not None:
        for nbhd in sorted(set(neighborhoods) - set(exposure)):
            audit.record('confounder', 'no_base_year_postings', nbhd, shock.name)
    return exposure


def standardize_mapping(mapping: Mapping[str, float], name: str = 'value') -> Dict[str, float]:
    """Z-score a per-entity mapping with the sample SD; absent values stay absent"""
    keys = sorted(mapping)
    values = np.array([mapping[key] for key in keys], dtype=float)
    finite = values[np.isfinite(values)]
    if len(np.unique(finite)) < 2:
        raise StandardizationError(f"Cannot standardize {name}: fewer than two distinct values",
                                   {'variable': name})
    z = (values - finite.mean()) / finite.std(ddof=1)
    return dict(zip(keys, z.tolist()))


def attach_confounders(panel: PanelDataset, postings: Sequence[PostingRecord],
                       shocks: Sequence[ShockDefinition] = DEFAULT_SHOCKS, year: int = 2018,
                       audit: Optional[AuditLog] = None) -> PanelDataset:
    """Attach each shock's standardized base-year exposure as a pre-determined variable"""
    for shock in shocks:
        raw = build_confounder_exposure(postings, shock, year, panel.entities, audit)
        panel = attach_entity_values(panel, shock.variable, standardize_mapping(raw, shock.variable),
                                     units='SD of share', standardized=True)
    return panel


# ---------------------------------------------------------------------------
# Design construction
# ---------------------------------------------------------------------------

def _complete_sample(panel: PanelDataset, years: Sequence[int], columns: Sequence[str],
                     audit: Optional[AuditLog], stage: str) -> pd.DataFrame:
    missing = [column for column in columns if column not in panel.frame.columns]
    if missing:
        raise SpecificationError(f"Panel lacks variables: {missing}", {'missing': missing})
    frame = panel.frame.loc[panel.frame['year'].isin(list(years))]
    complete = frame[list(columns)].notna().all(axis=1)
    dropped = frame.loc[~complete]
    if len(dropped):
        logger.info(f"{stage}: dropped {len(dropped)} rows with absent values "
                    f"({dropped['entity_id'].nunique()} entities affected)")
        if audit is not None:
            for entity, year in zip(dropped['entity_id'], dropped['year']):
                audit.record(stage, 'incomplete_row', f"{entity}:{int(year)}")
    return frame.loc[complete].reset_index(drop=True)


def _design(frame: pd.DataFrame, outcome: str, columns: Dict[str, np.ndarray], cluster: str) -> DesignMatrix:
    names = list(columns)
    X = np.column_stack([columns[name] for name in names]) if names else np.empty((len(frame), 0))
    return DesignMatrix(
        y=frame[outcome].to_numpy(dtype=float), X=X, names=tuple(names),
        clusters=frame[cluster].to_numpy(), entity_ids=frame['entity_id'].to_numpy(),
        time_ids=frame['year'].to_numpy(), fe_dims=('entity', 'time'), outcome=outcome,
    )


def _did_columns(frame: pd.DataFrame, spec: DidSpec, treatment_terms: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    post = frame['year'].isin(spec.post_years).to_numpy(dtype=float)
    columns = dict(treatment_terms)
    for name in spec.confounders:
        columns[interaction_name(name, POST)] = frame[name].to_numpy(dtype=float) * post
    for name in spec.controls:
        columns[name] = frame[name].to_numpy(dtype=float)
    return columns


def _check_post(frame: pd.DataFrame, spec: DidSpec) -> None:
    if not frame['year'].isin(spec.post_years).any():
        raise SpecificationError(f"No observations in post years {list(spec.post_years)}")


def did_sample(panel: PanelDataset, spec: DidSpec = DidSpec(),
               audit: Optional[AuditLog] = None) -> pd.DataFrame:
    """Complete-case rows of the DID window, in panel order"""
    columns = [spec.outcome, spec.treatment, *spec.confounders, *spec.controls]
    frame = _complete_sample(panel, spec.years, columns, audit, 'did_sample')
    _check_post(frame, spec)
    return frame


def build_did_design(panel: PanelDataset, spec: DidSpec = DidSpec(),
                     audit: Optional[AuditLog] = None,
                     treatment_values: Optional[np.ndarray] = None) -> DesignMatrix:
    """
    treatment x Post + confounder x Post + controls, entity and year FE

    treatment_values overrides the panel's treatment column on the complete
    sample (used by the permutation routines).
    """
    frame = did_sample(panel, spec, audit)
    treatment = frame[spec.treatment].to_numpy(dtype=float) if treatment_values is None \
        else np.asarray(treatment_values, dtype=float)
    post = frame['year'].isin(spec.post_years).to_numpy(dtype=float)
    return _design(frame, spec.outcome, _did_columns(frame, spec, {spec.treatment_term: treatment * post}),
                   spec.cluster)


def fit_did(panel: PanelDataset, spec: DidSpec = DidSpec(), audit: Optional[AuditLog] = None) -> FitResult:
    """
    Pre-determined difference-in-differences with two-way fixed effects

    The effect of interest is the coefficient on spec.treatment_term.
    """
    design = build_did_design(panel, spec, audit)
    fit = fit_ols(design, cov_type=spec.cov_type, inference=spec.inference)
    logger.info(f"DID {spec.treatment_term}: {fit.coefficient(spec.treatment_term):.4f} "
                f"(SE {fit.std_error(spec.treatment_term):.4f}, N={fit.n_obs}, G={fit.n_clusters})")
    return fit


def effect_size(beta: float) -> float:
    """Percent change implied by a log-point coefficient: 100*(exp(beta)-1)"""
    if not math.isfinite(beta):
        raise SpecificationError(f"Effect size needs a finite coefficient, got {beta}")
    return 100.0 * math.expm1(beta)


@dataclass(frozen=True)
class EventStudyPoint:
    year: int
    coef: float
    std_err: float
    p_value: float
    ci_lower: float
    ci_upper: float
    is_base: bool = False


@dataclass(frozen=True)
class EventStudyResult:
    fit: FitResult
    spec: EventStudySpec
    points: Tuple[EventStudyPoint, ...]
    pretrend: Optional[WaldTest]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([point.__dict__ for point in self.points])


def build_event_study_design(panel: PanelDataset, spec: EventStudySpec = EventStudySpec(),
                             audit: Optional[AuditLog] = None,
                             treatment_values: Optional[np.ndarray] = None) -> DesignMatrix:
    columns = [spec.outcome, spec.treatment, *spec.confounders, *spec.controls]
    frame = _complete_sample(panel, spec.years, columns, audit, 'event_study_sample')
    present = set(frame['year'].astype(int))
    empty = [year for year in spec.years if year not in present]
    if empty:
        raise SpecificationError(f"No observations in event-study year(s) {empty}", {'years': empty})
    treatment = frame[spec.treatment].to_numpy(dtype=float) if treatment_values is None \
        else np.asarray(treatment_values, dtype=float)
    years = frame['year'].to_numpy()
    terms = {spec.event_term(year): treatment * (years == year) for year in spec.event_years}
    return _design(frame, spec.outcome, _did_columns(frame, spec, terms), spec.cluster)


def fit_event_study(panel: PanelDataset, spec: EventStudySpec = EventStudySpec(),
                    audit: Optional[AuditLog] = None, wald_form: str = 'F') -> EventStudyResult:
    """
    One treatment x year coefficient per non-base year, base year pinned at 0,
    with a joint Wald test over the pre-period coefficients
    """
    design = build_event_study_design(panel, spec, audit)
    fit = fit_ols(design, cov_type=spec.cov_type, inference=spec.inference)
    ci = fit.conf_int()
    points = []
    for year in spec.years:
        if year == spec.base_year:
            points.append(EventStudyPoint(year, 0.0, 0.0, math.nan, 0.0, 0.0, True))
            continue
        name = spec.event_term(year)
        points.append(EventStudyPoint(
            year, fit.coefficient(name), fit.std_error(name), fit.p_value(name),
            float(ci.loc[name, 'lower']), float(ci.loc[name, 'upper']),
        ))
    pre_terms = [spec.event_term(year) for year in spec.pre_years]
    pretrend = wald_joint(fit, pre_terms, form=wald_form) if pre_terms else None
    if pretrend is not None:
        logger.info(f"Pre-trend joint test: statistic {pretrend.statistic:.3f}, p {pretrend.p_value:.3f}")
    return EventStudyResult(fit, spec, tuple(points), pretrend)


def triple_terms(spec: DidSpec, moderator: str) -> List[str]:
    terms = [spec.treatment_term]
    if moderator != spec.treatment:
        terms.append(interaction_name(moderator, POST))
    terms.append(interaction_name(spec.treatment, moderator, POST))
    return terms


def build_triple_did_design(panel: PanelDataset, spec: DidSpec, moderator: str,
                            audit: Optional[AuditLog] = None) -> DesignMatrix:
    """
    D x Post, M x Post and D x M x Post plus confounder and baseline controls

    When the moderator is the treatment itself, M x Post duplicates D x Post
    and is left out, giving the quadratic-in-treatment specification.
    """
    columns = [spec.outcome, spec.treatment, moderator, *spec.confounders, *spec.controls]
    frame = _complete_sample(panel, spec.years, list(dict.fromkeys(columns)), audit, 'triple_did_sample')
    _check_post(frame, spec)
    post = frame['year'].isin(spec.post_years).to_numpy(dtype=float)
    d = frame[spec.treatment].to_numpy(dtype=float)
    m = frame[moderator].to_numpy(dtype=float)
    terms = {spec.treatment_term: d * post}
    if moderator != spec.treatment:
        terms[interaction_name(moderator, POST)] = m * post
    terms[interaction_name(spec.treatment, moderator, POST)] = d * m * post
    return _design(frame, spec.outcome, _did_columns(frame, spec, terms), spec.cluster)


def fit_triple_did(panel: PanelDataset, spec: DidSpec, moderator: str,
                   audit: Optional[AuditLog] = None) -> FitResult:
    design = build_triple_did_design(panel, spec, moderator, audit)
    fit = fit_ols(design, cov_type=spec.cov_type, inference=spec.inference)
    term = interaction_name(spec.treatment, moderator, POST)
    logger.info(f"Triple-DID {term}: {fit.coefficient(term):.4f} (p {fit.p_value(term):.3f})")
    return fit


# ---------------------------------------------------------------------------
# Interaction fixed-effects models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InteractionSpec:
    outcome: str = 'ln_avg_wage'
    exposure: str = 'genai'
    education: str = 'education'
    heat: str = 'heat'
    standardized_controls: Tuple[str, ...] = ('ndvi', 'poi_density', 'land_use_ratio')
    raw_controls: Tuple[str, ...] = ('ln_population', 'nightlight')
    window: Tuple[int, int] = (2018, 2024)
    cluster: str = 'entity_id'
    cov_type: str = 'cluster'
    inference: str = 't'

    def moderator_column(self, moderator: Optional[str]) -> Optional[str]:
        if moderator is None:
            return None
        if moderator == 'education':
            return self.education
        if moderator == 'heat':
            return self.heat
        raise SpecificationError(f"Unknown moderator {moderator!r}; expected education, heat or none")

    def interaction_term(self, moderator: Optional[str]) -> Optional[str]:
        column = self.moderator_column(moderator)
        return None if column is None else interaction_name(self.exposure, column)

    @property
    def standardized(self) -> List[str]:
        return [self.exposure, self.education, self.heat, *self.standardized_controls]


def _zscore_column(values: np.ndarray, name: str) -> np.ndarray:
    if len(np.unique(values)) < 2:
        raise StandardizationError(f"Cannot standardize {name}: constant on the estimation sample",
                                   {'variable': name})
    return (values - values.mean()) / values.std(ddof=1)


def interaction_sample(panel: PanelDataset, spec: InteractionSpec = InteractionSpec(),
                       audit: Optional[AuditLog] = None) -> pd.DataFrame:
    """Complete-case sample with the standardized variables replaced by pooled z-scores"""
    years = range(spec.window[0], spec.window[1] + 1)
    columns = [spec.outcome, *spec.standardized, *spec.raw_controls, spec.cluster]
    frame = _complete_sample(panel, years, list(dict.fromkeys(columns)), audit, 'interaction_sample')
    for name in spec.standardized:
        frame[name] = _zscore_column(frame[name].to_numpy(dtype=float), name)
    return frame


def interaction_design_from_sample(frame: pd.DataFrame, spec: InteractionSpec,
                                   moderator: Optional[str],
                                   exposure_values: Optional[np.ndarray] = None) -> DesignMatrix:
    g = frame[spec.exposure].to_numpy(dtype=float) if exposure_values is None \
        else np.asarray(exposure_values, dtype=float)
    columns = {
        spec.exposure: g,
        spec.education: frame[spec.education].to_numpy(dtype=float),
        spec.heat: frame[spec.heat].to_numpy(dtype=float),
    }
    moderator_column = spec.moderator_column(moderator)
    if moderator_column is not None:
        columns[spec.interaction_term(moderator)] = g * frame[moderator_column].to_numpy(dtype=float)
    for name in (*spec.raw_controls, *spec.standardized_controls):
        columns[name] = frame[name].to_numpy(dtype=float)
    return _design(frame, spec.outcome, columns, spec.cluster)


def build_interaction_design(panel: PanelDataset, moderator: Optional[str] = 'education',
                             spec: InteractionSpec = InteractionSpec(),
                             audit: Optional[AuditLog] = None) -> DesignMatrix:
    return interaction_design_from_sample(interaction_sample(panel, spec, audit), spec, moderator)


def fit_interaction_fe(panel: PanelDataset, moderator: Optional[str] = 'education',
                       spec: InteractionSpec = InteractionSpec(),
                       audit: Optional[AuditLog] = None) -> FitResult:
    """
    Two-way FE model of log wages on exposure, education and heat with an
    optional exposure x moderator interaction (moderator None: baseline column)
    """
    design = build_interaction_design(panel, moderator, spec, audit)
    fit = fit_ols(design, cov_type=spec.cov_type, inference=spec.inference)
    term = spec.interaction_term(moderator)
    if term is not None:
        logger.info(f"Interaction FE {term}: {fit.coefficient(term):.4f} (p {fit.p_value(term):.3f})")
    return fit


@dataclass(frozen=True)
class MarginalEffectPoint:
    moderator: float
    effect: float
    std_err: float
    ci_lower: float
    ci_upper: float


@dataclass(frozen=True)
class MarginalEffectProfile:
    main: str
    interaction: str
    points: Tuple[MarginalEffectPoint, ...]
    crossing: Optional[float]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([point.__dict__ for point in self.points])


def marginal_effect_profile(fit: FitResult, moderator_grid: Iterable[float], main: str = 'genai',
                            interaction: str = 'genai:education',
                            alpha: float = 0.05) -> MarginalEffectProfile:
    """
    beta1 + beta3*m over a moderator grid with delta-method SEs

    The zero crossing -beta1/beta3 is reported when beta3 is nonzero.
    """
    i, j = fit.index(main), fit.index(interaction)
    b1, b3 = fit.params[i], fit.params[j]
    v11, v33, v13 = fit.cov[i, i], fit.cov[j, j], fit.cov[i, j]
    crit = fit.critical_value(alpha)
    points = []
    for m in moderator_grid:
        m = float(m)
        effect = float(b1 + b3 * m)
        se = math.sqrt(max(v11 + m * m * v33 + 2 * m * v13, 0.0))
        points.append(MarginalEffectPoint(m, effect, se, effect - crit * se, effect + crit * se))
    crossing = None if b3 == 0 else float(-b1 / b3)
    return MarginalEffectProfile(main, interaction, tuple(points), crossing)


# ---------------------------------------------------------------------------
# Descriptive outputs
# ---------------------------------------------------------------------------

TERCILE_LABELS = ('low', 'medium', 'high')


def exposure_terciles(panel: PanelDataset, variable: str = 'exposure', year: int = 2018) -> Dict[str, str]:
    """Low/medium/high group per entity from terciles of its base-year value"""
    frame = panel.frame.loc[(panel.frame['year'] == year) & panel.frame[variable].notna(),
                            ['entity_id', variable]]
    if len(frame) < 3:
        raise SpecificationError(f"Terciles need at least 3 entities with {variable} in {year}")
    ranks = frame[variable].rank(method='first')
    groups = pd.qcut(ranks, 3, labels=list(TERCILE_LABELS))
    return dict(zip(frame['entity_id'], groups.astype(str)))


def group_trajectories(panel: PanelDataset, groups: Mapping[str, str],
                       variable: str = 'avg_wage') -> pd.DataFrame:
    """Year x group mean of a variable"""
    frame = panel.frame[['entity_id', 'year', variable]].copy()
    frame['group'] = frame['entity_id'].map(groups)
    frame = frame.dropna(subset=['group', variable])
    table = frame.pivot_table(index='year', columns='group', values=variable, aggfunc='mean')
    ordered = [label for label in TERCILE_LABELS if label in table.columns]
    ordered += sorted(c for c in table.columns if c not in ordered)
    return table[ordered].reset_index()


def skill_wage_decoupling(panel: PanelDataset, groups: Mapping[str, str], base_year: int = 2018,
                          wage: str = 'avg_wage', skill: str = 'high_skill_share') -> pd.DataFrame:
    """Per year and group: high-skill share and wage index (base year = 100)"""
    frame = panel.frame[['entity_id', 'year', wage, skill]].copy()
    frame['group'] = frame['entity_id'].map(groups)
    frame = frame.dropna(subset=['group'])
    summary = frame.groupby(['group', 'year'], sort=True).agg(
        avg_wage=(wage, 'mean'), high_skill_share=(skill, 'mean')).reset_index()
    base = summary.loc[summary['year'] == base_year].set_index('group')['avg_wage']
    summary['wage_index'] = 100.0 * summary['avg_wage'] / summary['group'].map(base)
    return summary[['year', 'group', 'high_skill_share', 'avg_wage', 'wage_index']]


@dataclass(frozen=True)
class BinnedScatter:
    bins: pd.DataFrame = field(compare=False)
    slope: float
    std_err: float
    p_value: float
    n_obs: int


def binned_scatter(panel: PanelDataset, x: str = 'exposure', y: str = 'ln_avg_wage',
                   year_from: int = 2018, year_to: int = 2024, n_bins: int = 20) -> BinnedScatter:
    """
    Base-year x against the change in y between two years: equal-count bins of
    x with bin means and the OLS slope with HC1 standard error
    """
    frame = panel.frame
    start = frame.loc[frame['year'] == year_from].set_index('entity_id')
    end = frame.loc[frame['year'] == year_to].set_index('entity_id')
    data = pd.DataFrame({'x': start[x], 'growth': end[y] - start[y]}).dropna()
    if len(data) < 3:
        raise SpecificationError(f"Binned scatter needs at least 3 complete entities, got {len(data)}")
    n_bins = max(1, min(n_bins, len(data)))
    data['bin'] = pd.qcut(data['x'].rank(method='first'), n_bins, labels=False)
    bins = data.groupby('bin').agg(x_mean=('x', 'mean'), growth_mean=('growth', 'mean'),
                                   n=('x', 'size')).reset_index()
    design = DesignMatrix(y=data['growth'].to_numpy(), X=np.column_stack([np.ones(len(data)), data['x'].to_numpy()]),
                          names=('const', x), outcome='growth')
    fit = fit_ols(design, cov_type='hc1')
    return BinnedScatter(bins, fit.coefficient(x), fit.std_error(x), fit.p_value(x), fit.n_obs)
