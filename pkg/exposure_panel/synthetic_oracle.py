#!/usr/bin/env python3
"""
Synthetic Oracle
Panels, cross-sections, spatial fields and posting files generated from fully
specified processes with planted parameters, plus Monte Carlo coverage runs.

Randomness comes from the Philox counter-based generator keyed by
SeedSequence([seed, stream, index]); the stream constants below are part of
the fixture contract.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .causal_designs import (
    DEFAULT_CONFOUNDERS, DEFAULT_CONTROLS, DidSpec, EventStudySpec, InteractionSpec,
    fit_did, fit_event_study, fit_interaction_fe, fit_triple_did,
)
from .estimator_engine import DesignMatrix, fit_2sls, fit_ols
from .exceptions import ExposurePanelError, SpatialError, ValidationError
from .exposure_index import AssessmentRecord, ExposureLevel
from .panel_core import EducationCategory, PanelDataset, PostingRecord, VariableMeta
from .shift_share import LongDifferenceSpec
from .spatial_stats import lattice_weights

logger = logging.getLogger(__name__)

STREAM_ENTITY = 1
STREAM_TIME = 2
STREAM_IV = 3
STREAM_SPATIAL = 4
STREAM_POSTINGS = 5
STREAM_ASSESSMENTS = 6

BASE_LOG_WAGE = 9.5
MODELS = ('M1', 'M2', 'M3', 'M4', 'M5')
ROUNDS = 5


def make_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Philox generator keyed by (seed, stream, index)"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream), int(index)])))


@dataclass(frozen=True)
class SpatialBlock:
    row_start: int
    row_stop: int
    col_start: int
    col_stop: int
    level: float

    def contains(self, row: int, col: int) -> bool:
        return self.row_start <= row < self.row_stop and self.col_start <= col < self.col_stop


@dataclass(frozen=True)
class SyntheticSpec:
    n_entities: int = 500
    years: Tuple[int, int] = (2018, 2024)
    base_year: int = 2022
    post_years: Tuple[int, ...] = (2023, 2024)
    true_beta_did: float = -0.15
    pretrend_slope: float = 0.0
    confounder_loadings: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    control_loadings: Tuple[float, ...] = (0.1, 0.05, 0.0, 0.0, 0.0)
    triple_beta3: float = 0.0
    main_effects: Tuple[float, float, float] = (0.8, 1.15, 1.19)
    interaction_beta3: float = -0.5
    interaction_moderator: str = 'education'
    first_stage_pi: float = 0.5
    true_beta_iv: float = -0.3
    iv_endogeneity: float = 0.6
    cluster_rho: float = 0.3
    noise_sd: float = 0.5
    seed: int = 0
    lattice: Optional[Tuple[int, int]] = None
    blocks: Tuple[SpatialBlock, ...] = ()

    def __post_init__(self):
        errors = []
        if not self.noise_sd > 0:
            errors.append(f"noise_sd must be positive, got {self.noise_sd}")
        if self.years[1] - self.years[0] + 1 < 4:
            errors.append(f"years must span at least 4 periods, got {self.years}")
        if not 0 <= self.cluster_rho < 1:
            errors.append(f"cluster_rho must be in [0, 1), got {self.cluster_rho}")
        if self.n_entities < 3:
            errors.append(f"n_entities must be at least 3, got {self.n_entities}")
        if len(self.confounder_loadings) != len(DEFAULT_CONFOUNDERS):
            errors.append('confounder_loadings needs one value per confounder')
        if len(self.control_loadings) != len(DEFAULT_CONTROLS):
            errors.append('control_loadings needs one value per control')
        if not -1 < self.iv_endogeneity < 1:
            errors.append(f"iv_endogeneity must be in (-1, 1), got {self.iv_endogeneity}")
        if self.interaction_moderator not in ('education', 'heat'):
            errors.append(f"interaction_moderator must be education or heat")
        planted = [self.true_beta_did, self.pretrend_slope, self.triple_beta3, self.interaction_beta3,
                   self.first_stage_pi, self.true_beta_iv, *self.confounder_loadings,
                   *self.control_loadings, *self.main_effects]
        if not all(math.isfinite(value) for value in planted):
            errors.append('planted parameters must be finite')
        if errors:
            raise ValidationError(errors)

    @property
    def year_range(self) -> List[int]:
        return list(range(self.years[0], self.years[1] + 1))


@dataclass(frozen=True)
class SyntheticTruth:
    spec: SyntheticSpec
    planted: Mapping[str, float]
    exposures: Mapping[str, float] = field(default_factory=dict)
    shock_exposures: Mapping[str, Mapping[str, float]] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {'planted': dict(sorted(self.planted.items())), 'seed': self.spec.seed,
                'n_entities': self.spec.n_entities}


def _entity_ids(n: int) -> List[str]:
    width = max(4, len(str(n)))
    return [f"N{i:0{width}d}" for i in range(n)]


def _zscore(values: np.ndarray) -> np.ndarray:
    return (values - values.mean()) / values.std(ddof=1)


def _entity_draws(spec: SyntheticSpec, n_years: int) -> Dict[str, np.ndarray]:
    """Per-entity draws, each entity from its own (seed, entity, i) stream"""
    n = spec.n_entities
    names = ('genai', 'mu', 'u', *DEFAULT_CONFOUNDERS, 'education_2018', 'heat_2018')
    static = {name: np.empty(n) for name in names}
    panel_draws = {name: np.empty((n, n_years)) for name in ('eps', 'g_path', 'e_path', 'h_path', *DEFAULT_CONTROLS)}
    for i in range(n):
        rng = make_rng(spec.seed, STREAM_ENTITY, i)
        for name in names:
            static[name][i] = rng.standard_normal()
        for name in panel_draws:
            panel_draws[name][i] = rng.standard_normal(n_years)
    static.update(panel_draws)
    return static


def gen_did_panel(spec: SyntheticSpec = SyntheticSpec()) -> Tuple[PanelDataset, SyntheticTruth]:
    """
    ln W_it = 9.5 + mu_i + lambda_t + beta*G_i*Post_t + sum_s gamma_s*Z_si*Post_t
              + slope*G_i*(t - base)*1[t < base] + beta3*G_i*M_i*Post_t + delta'X_it + eps_it

    eps is equicorrelated within entity (correlation cluster_rho, SD noise_sd).
    G_i, Z_si and M_i are standard normal draws standardized across entities.
    """
    years = np.array(spec.year_range)
    n, T = spec.n_entities, len(years)
    draws = _entity_draws(spec, T)
    lam = make_rng(spec.seed, STREAM_TIME).standard_normal(T) * 0.1

    genai = _zscore(draws['genai'])
    confounders = {name: _zscore(draws[name]) for name in DEFAULT_CONFOUNDERS}
    education_2018 = _zscore(draws['education_2018'])
    heat_2018 = _zscore(draws['heat_2018'])
    mu = draws['mu'] * 0.3

    post = np.isin(years, spec.post_years).astype(float)[None, :]
    pre_trend = np.where(years < spec.base_year, years - spec.base_year, 0.0)[None, :]
    eps = spec.noise_sd * (math.sqrt(spec.cluster_rho) * draws['u'][:, None]
                           + math.sqrt(1 - spec.cluster_rho) * draws['eps'])
    controls = {name: draws[name] for name in DEFAULT_CONTROLS}

    ln_wage = (BASE_LOG_WAGE + mu[:, None] + lam[None, :]
               + spec.true_beta_did * genai[:, None] * post
               + spec.pretrend_slope * genai[:, None] * pre_trend
               + spec.triple_beta3 * (genai * education_2018)[:, None] * post
               + eps)
    for loading, name in zip(spec.confounder_loadings, DEFAULT_CONFOUNDERS):
        ln_wage = ln_wage + loading * confounders[name][:, None] * post
    for loading, name in zip(spec.control_loadings, DEFAULT_CONTROLS):
        ln_wage = ln_wage + loading * controls[name]

    genai_path = genai[:, None] + 0.2 * (years - years[0])[None, :] / max(T - 1, 1) + 0.3 * draws['g_path']
    entity_ids = _entity_ids(n)
    frame = pd.DataFrame({
        'entity_id': np.repeat(entity_ids, T),
        'year': np.tile(years, n),
        'ln_avg_wage': ln_wage.ravel(),
        'avg_wage': np.exp(ln_wage).ravel(),
        'genai_2018': np.repeat(genai, T),
        **{name: np.repeat(values, T) for name, values in confounders.items()},
        'education_2018': np.repeat(education_2018, T),
        'heat_2018': np.repeat(heat_2018, T),
        **{name: values.ravel() for name, values in controls.items()},
        'genai': genai_path.ravel(),
        'exposure': (1.0 / (1.0 + np.exp(-genai_path))).ravel(),
        'education': (education_2018[:, None] + 0.3 * draws['e_path']).ravel(),
        'heat': (heat_2018[:, None] + 0.3 * draws['h_path']).ravel(),
        'high_skill_share': (1.0 / (1.0 + np.exp(-(education_2018[:, None] + 0.1 * draws['e_path'])))).ravel(),
    })
    metadata = {name: VariableMeta(standardized=True)
                for name in ('genai_2018', *DEFAULT_CONFOUNDERS, 'education_2018', 'heat_2018')}
    panel = PanelDataset.from_frame(frame, metadata, tuple(spec.years))
    planted = {
        'beta_did': spec.true_beta_did, 'pretrend_slope': spec.pretrend_slope,
        'triple_beta3': spec.triple_beta3,
        **{f"gamma_{name}": loading for name, loading in zip(DEFAULT_CONFOUNDERS, spec.confounder_loadings)},
    }
    truth = SyntheticTruth(
        spec, planted, dict(zip(entity_ids, genai.tolist())),
        {name: dict(zip(entity_ids, values.tolist())) for name, values in confounders.items()},
    )
    return panel, truth


def gen_interaction_panel(spec: SyntheticSpec = SyntheticSpec()) -> Tuple[PanelDataset, SyntheticTruth]:
    """
    ln W_it = 9.5 + mu_i + lambda_t + b1*G_it + b2*E_it + b3*H_it + beta3*G_it*M_it + eps_it

    G, E, H and the standardized controls are pooled z-scores over the whole
    panel, so refitting on the full panel needs no rescaling of the planted values.
    """
    years = np.array(spec.year_range)
    n, T = spec.n_entities, len(years)
    draws = _entity_draws(spec, T)
    lam = make_rng(spec.seed, STREAM_TIME).standard_normal(T) * 0.1
    g = _zscore((draws['genai'][:, None] + draws['g_path']).ravel())
    e = _zscore((draws['education_2018'][:, None] + draws['e_path']).ravel())
    h = _zscore((draws['heat_2018'][:, None] + draws['h_path']).ravel())
    moderator = e if spec.interaction_moderator == 'education' else h
    controls = {name: draws[name].ravel() for name in DEFAULT_CONTROLS}
    for name in ('ndvi', 'poi_density', 'land_use_ratio'):
        controls[name] = _zscore(controls[name])
    eps = spec.noise_sd * (math.sqrt(spec.cluster_rho) * np.repeat(draws['u'], T)
                           + math.sqrt(1 - spec.cluster_rho) * draws['eps'].ravel())
    b1, b2, b3 = spec.main_effects
    ln_wage = (BASE_LOG_WAGE + np.repeat(draws['mu'] * 0.3, T) + np.tile(lam, n)
               + b1 * g + b2 * e + b3 * h + spec.interaction_beta3 * g * moderator + eps)
    for loading, name in zip(spec.control_loadings, DEFAULT_CONTROLS):
        ln_wage = ln_wage + loading * controls[name]
    entity_ids = _entity_ids(n)
    frame = pd.DataFrame({
        'entity_id': np.repeat(entity_ids, T), 'year': np.tile(years, n),
        'ln_avg_wage': ln_wage, 'genai': g, 'education': e, 'heat': h, **controls,
    })
    planted = {'beta_genai': b1, 'beta_education': b2, 'beta_heat': b3,
               'interaction_beta3': spec.interaction_beta3}
    return PanelDataset.from_frame(frame, window=tuple(spec.years)), SyntheticTruth(spec, planted)


def gen_iv_cross_section(spec: SyntheticSpec = SyntheticSpec(),
                         ld_spec: LongDifferenceSpec = LongDifferenceSpec()) -> Tuple[pd.DataFrame, SyntheticTruth]:
    """
    Bartik_i exogenous; dGenAI_i = pi*Bartik_i + v_i; dlnW_i = beta*dGenAI_i + e_i
    with corr(v, e) = iv_endogeneity. Controls are pure noise.
    """
    rng = make_rng(spec.seed, STREAM_IV)
    n = spec.n_entities
    bartik = _zscore(rng.standard_normal(n))
    shocks = rng.standard_normal((n, 2))
    rho = spec.iv_endogeneity
    v = spec.noise_sd * shocks[:, 0]
    e = spec.noise_sd * (rho * shocks[:, 0] + math.sqrt(1 - rho ** 2) * shocks[:, 1])
    d_genai = spec.first_stage_pi * bartik + v
    d_wage = spec.true_beta_iv * d_genai + e
    table = pd.DataFrame({
        'entity_id': _entity_ids(n),
        ld_spec.outcome_change: d_wage,
        ld_spec.exposure_change: d_genai,
        ld_spec.instrument: bartik,
    })
    for name in ld_spec.controls:
        table[name] = rng.standard_normal(n)
    planted = {'beta_iv': spec.true_beta_iv, 'first_stage_pi': spec.first_stage_pi,
               'reduced_form': spec.first_stage_pi * spec.true_beta_iv, 'endogeneity': rho}
    return table, SyntheticTruth(spec, planted)


@dataclass(frozen=True)
class SpatialField:
    units: Tuple[str, ...]
    values: np.ndarray
    mask: Tuple[str, ...]
    rows: int
    cols: int

    def as_mapping(self) -> Dict[str, float]:
        return dict(zip(self.units, self.values.tolist()))


def gen_spatial_field(rows: int, cols: int, blocks: Sequence[SpatialBlock], noise_sd: float = 0.0,
                      seed: int = 0, background: float = 0.0) -> SpatialField:
    """
    Block means plus noise on a rows x cols lattice (units as in lattice_weights)

    mask marks block cells whose queen neighbors all lie in the same block:
    'HH' for blocks above the background, 'LL' below, '' elsewhere.
    """
    for block in blocks:
        if not (0 <= block.row_start < block.row_stop <= rows and 0 <= block.col_start < block.col_stop <= cols):
            raise SpatialError(f"Block {block} outside the {rows}x{cols} lattice")
    values = np.full((rows, cols), float(background))
    mask = np.full((rows, cols), '', dtype=object)
    for block in blocks:
        values[block.row_start:block.row_stop, block.col_start:block.col_stop] = block.level
    for block in blocks:
        label = 'HH' if block.level > background else 'LL' if block.level < background else ''
        for r in range(block.row_start, block.row_stop):
            for c in range(block.col_start, block.col_stop):
                neighbors = [(r + dr, c + dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)
                             if (dr or dc) and 0 <= r + dr < rows and 0 <= c + dc < cols]
                if all(block.contains(nr, nc) for nr, nc in neighbors):
                    mask[r, c] = label
    if noise_sd > 0:
        values = values + noise_sd * make_rng(seed, STREAM_SPATIAL).standard_normal((rows, cols))
    if np.ptp(values) == 0:
        raise SpatialError('Requested spatial field is constant')
    units = tuple(lattice_weights(rows, cols).units)
    return SpatialField(units, values.ravel(), tuple(mask.ravel()), rows, cols)


def gen_postings(spec: SyntheticSpec = SyntheticSpec(), n_occupations: int = 40,
                 postings_per_cell: float = 20.0,
                 duplicate_share: float = 0.05) -> Tuple[List[PostingRecord], List[AssessmentRecord]]:
    """
    Posting records and five-model x five-round occupation assessments

    A share of postings is emitted twice later in the same month so that
    deduplication has work to do.
    """
    occupations = [f"OCC{j:03d}" for j in range(n_occupations)]
    rng_assess = make_rng(spec.seed, STREAM_ASSESSMENTS)
    levels = [level.value for level in ExposureLevel]
    assessments = []
    for occupation in occupations:
        propensity = rng_assess.dirichlet(np.ones(len(levels)))
        for model in MODELS:
            for round_number in range(1, ROUNDS + 1):
                level = levels[int(rng_assess.choice(len(levels), p=propensity))]
                assessments.append(AssessmentRecord(occupation, model, round_number, level))

    industries = list('ABCDEFGHIJKLMNOPQR')
    education = [category.value for category in EducationCategory]
    postings = []
    for i, nbhd in enumerate(_entity_ids(spec.n_entities)):
        rng = make_rng(spec.seed, STREAM_POSTINGS, i)
        industry_mix = rng.dirichlet(np.full(len(industries), 0.5))
        occupation_mix = rng.dirichlet(np.full(n_occupations, 0.5))
        wage_level = rng.normal(math.log(12_000 * 12), 0.3)
        serial = 0
        for year in spec.year_range:
            for _ in range(int(rng.poisson(postings_per_cell))):
                month = int(rng.integers(1, 13))
                day = int(rng.integers(1, 28))
                record = PostingRecord(
                    posting_id=f"{nbhd}-{serial:06d}", company_id=f"C{int(rng.integers(0, 200)):04d}",
                    neighborhood_id=nbhd, posting_date=date(year, month, day),
                    occupation_code=occupations[int(rng.choice(n_occupations, p=occupation_mix))],
                    industry_code=industries[int(rng.choice(len(industries), p=industry_mix))],
                    compensation_total_annual=float(round(math.exp(rng.normal(wage_level, 0.4)), 2)),
                    education_requirement=education[int(rng.integers(0, len(education)))],
                )
                serial += 1
                postings.append(record)
                if rng.random() < duplicate_share:
                    postings.append(replace(record, posting_id=f"{nbhd}-{serial:06d}",
                                            posting_date=date(year, month, 28)))
                    serial += 1
    logger.info(f"Generated {len(postings)} postings and {len(assessments)} assessments")
    return postings, assessments


ESTIMATORS = ('did', 'did-hc1', 'event-study', 'triple-did', 'interaction', 'iv', 'iv-ols')


@dataclass(frozen=True)
class CoverageResult:
    estimator: str
    planted: float
    n_draws: int
    coverage: float
    mean_bias: float
    rejection_rate: float
    estimates: Tuple[float, ...]
    failures: int = 0

    def to_dict(self) -> Dict:
        out = dict(self.__dict__)
        out['estimates'] = list(self.estimates)
        return out


def _draw_outcome(spec: SyntheticSpec, estimator: str, alpha: float) -> Tuple[float, float, bool, bool]:
    """(estimate, planted, covered, rejected) for one generated dataset"""
    if estimator in ('did', 'did-hc1'):
        panel, _ = gen_did_panel(spec)
        did = DidSpec(cov_type='cluster' if estimator == 'did' else 'hc1')
        fit = fit_did(panel, did)
        term, planted = did.treatment_term, spec.true_beta_did
    elif estimator == 'event-study':
        panel, _ = gen_did_panel(spec)
        result = fit_event_study(panel, EventStudySpec(base_year=spec.base_year, post_years=spec.post_years))
        return result.pretrend.statistic, math.nan, False, result.pretrend.p_value < alpha
    elif estimator == 'triple-did':
        panel, _ = gen_did_panel(spec)
        did = DidSpec()
        fit = fit_triple_did(panel, did, 'education_2018')
        term, planted = 'genai_2018:education_2018:post', spec.triple_beta3
    elif estimator == 'interaction':
        panel, _ = gen_interaction_panel(spec)
        interaction = InteractionSpec()
        fit = fit_interaction_fe(panel, spec.interaction_moderator, interaction)
        term, planted = interaction.interaction_term(spec.interaction_moderator), spec.interaction_beta3
    elif estimator in ('iv', 'iv-ols'):
        ld = LongDifferenceSpec()
        table, _ = gen_iv_cross_section(spec, ld)
        term, planted = ld.exposure_change, spec.true_beta_iv
        names = ('const', ld.exposure_change) if estimator == 'iv-ols' else ('const', ld.exposure_change, ld.instrument)
        X = np.column_stack([np.ones(len(table))] + [table[name].to_numpy() for name in names[1:]])
        design = DesignMatrix(y=table[ld.outcome_change].to_numpy(), X=X, names=names)
        fit = fit_ols(design, cov_type='hc1') if estimator == 'iv-ols' \
            else fit_2sls(design, ld.exposure_change, ld.instrument, cov_type='hc1')
    else:
        raise ValidationError([f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}"])
    ci = fit.conf_int(alpha)
    estimate = fit.coefficient(term)
    covered = ci.loc[term, 'lower'] <= planted <= ci.loc[term, 'upper']
    return estimate, planted, bool(covered), fit.p_value(term) < alpha


def run_coverage(spec: SyntheticSpec, estimator: str = 'did', n_draws: int = 200, alpha: float = 0.05,
                 threads: int = 1) -> CoverageResult:
    """
    Monte Carlo coverage of an estimator against its planted value

    Draw d regenerates the data with seed spec.seed + d; results are reduced
    in draw order.
    """
    if estimator not in ESTIMATORS:
        raise ValidationError([f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}"])
    if n_draws < 1:
        raise ValidationError([f"n_draws must be positive, got {n_draws}"])

    def one(d: int):
        try:
            return _draw_outcome(replace(spec, seed=spec.seed + d), estimator, alpha)
        except ExposurePanelError as e:
            logger.warning(f"Coverage draw {d} failed: {e}")
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            outcomes = list(executor.map(one, range(n_draws)))
    else:
        outcomes = [one(d) for d in range(n_draws)]
    done = [outcome for outcome in outcomes if outcome is not None]
    if not done:
        raise ValidationError([f"all {n_draws} coverage draws failed"])
    estimates = np.array([outcome[0] for outcome in done])
    planted = done[0][1]
    result = CoverageResult(
        estimator=estimator, planted=planted, n_draws=len(done),
        coverage=float(np.mean([outcome[2] for outcome in done])) if math.isfinite(planted) else math.nan,
        mean_bias=float(estimates.mean() - planted) if math.isfinite(planted) else math.nan,
        rejection_rate=float(np.mean([outcome[3] for outcome in done])),
        estimates=tuple(float(v) for v in estimates), failures=n_draws - len(done),
    )
    logger.info(f"Coverage {estimator}: {result.coverage:.3f} over {result.n_draws} draws, "
                f"bias {result.mean_bias:.4f}, rejection {result.rejection_rate:.3f}")
    return result
