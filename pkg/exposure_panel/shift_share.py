#!/usr/bin/env python3
"""
Shift-Share
Leave-one-out Bartik instrument from base-year industry composition and
long-difference reduced-form / 2SLS estimation.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .audit import AuditLog
from .causal_designs import EventStudyResult, EventStudySpec, fit_event_study
from .estimator_engine import DesignMatrix, FitResult, fit_2sls, fit_ols
from .exceptions import SpecificationError
from .panel_core import PanelDataset, PostingRecord, attach_entity_values

logger = logging.getLogger(__name__)

SHARE_TOLERANCE = 1e-12
PRETREND_ALPHA = 0.05


@dataclass(frozen=True)
class ShiftShareInputs:
    industry_counts: Mapping[Tuple[str, str], int]
    industry_shares: Mapping[Tuple[str, str], float]
    loo_exposure: Mapping[Tuple[str, str], float]
    bartik: Mapping[str, float]
    coverage: Mapping[str, float]

    def to_frame(self) -> pd.DataFrame:
        """neighborhood_id, bartik_raw, bartik_std, coverage_share"""
        neighborhoods = sorted(self.coverage)
        raw = np.array([self.bartik.get(nbhd, math.nan) for nbhd in neighborhoods], dtype=float)
        finite = raw[np.isfinite(raw)]
        if finite.size >= 2 and finite.std(ddof=1) > 0:
            std = (raw - finite.mean()) / finite.std(ddof=1)
        else:
            std = np.full(len(raw), math.nan)
        return pd.DataFrame({
            'neighborhood_id': neighborhoods,
            'bartik_raw': raw,
            'bartik_std': std,
            'coverage_share': [self.coverage[nbhd] for nbhd in neighborhoods],
        })


def industry_counts(postings: Iterable[PostingRecord], year: int = 2018) -> Dict[Tuple[str, str], int]:
    counts: Dict[Tuple[str, str], int] = defaultdict(int)
    for record in postings:
        if record.year == year:
            counts[(record.neighborhood_id, record.industry_code)] += 1
    return dict(sorted(counts.items()))


def industry_shares(counts: Mapping[Tuple[str, str], int]) -> Dict[Tuple[str, str], float]:
    totals: Dict[str, int] = defaultdict(int)
    for (nbhd, _), n in counts.items():
        totals[nbhd] += n
    shares = {key: n / totals[key[0]] for key, n in counts.items() if totals[key[0]] > 0}
    row_sums: Dict[str, List[float]] = defaultdict(list)
    for (nbhd, _), share in shares.items():
        row_sums[nbhd].append(share)
    for nbhd, values in row_sums.items():
        if abs(math.fsum(values) - 1.0) > SHARE_TOLERANCE:
            raise SpecificationError(f"Industry shares of {nbhd} do not sum to 1")
    return shares


def leave_one_out_exposure(counts: Mapping[Tuple[str, str], int], exposures: Mapping[str, float],
                           focal: str, industry: str) -> float:
    """
    Count-weighted mean exposure of industry j over every neighborhood except
    the focal one; NaN when no other neighborhood is active in j
    """
    numerator, denominator = [], 0
    for (nbhd, code), n in counts.items():
        if code != industry or nbhd == focal or n <= 0:
            continue
        value = exposures.get(nbhd, math.nan)
        if value is None or not math.isfinite(value):
            continue
        numerator.append(n * value)
        denominator += n
    if denominator == 0:
        return math.nan
    return math.fsum(numerator) / denominator


def leave_one_out_table(counts: Mapping[Tuple[str, str], int],
                        exposures: Mapping[str, float]) -> Dict[Tuple[str, str], float]:
    """leave_one_out_exposure for every (neighborhood, industry) with a positive count"""
    totals: Dict[str, float] = defaultdict(float)
    weights: Dict[str, int] = defaultdict(int)
    for (nbhd, code), n in counts.items():
        value = exposures.get(nbhd, math.nan)
        if n > 0 and value is not None and math.isfinite(value):
            totals[code] += n * value
            weights[code] += n
    table = {}
    for (nbhd, code), n in counts.items():
        if n <= 0:
            continue
        value = exposures.get(nbhd, math.nan)
        own = value is not None and math.isfinite(value)
        remaining = weights[code] - (n if own else 0)
        if remaining <= 0:
            table[(nbhd, code)] = math.nan
            continue
        table[(nbhd, code)] = (totals[code] - (n * value if own else 0.0)) / remaining
    return table


def build_bartik(shares: Mapping[Tuple[str, str], float],
                 loo: Mapping[Tuple[str, str], float]) -> Tuple[Dict[str, float], Dict[str, float]]:
    """
    Bartik_i = sum_j s_ij * E_{-i,j} over industries with a defined leave-one-out value

    Shares are not renormalized; the covered share mass is returned alongside.

    Returns:
        (bartik per neighborhood, coverage share per neighborhood)
    """
    terms: Dict[str, List[float]] = defaultdict(list)
    covered: Dict[str, List[float]] = defaultdict(list)
    for (nbhd, code), share in sorted(shares.items()):
        covered.setdefault(nbhd, [])
        terms.setdefault(nbhd, [])
        value = loo.get((nbhd, code), math.nan)
        if not math.isfinite(value):
            continue
        terms[nbhd].append(share * value)
        covered[nbhd].append(share)
    bartik = {nbhd: (math.fsum(values) if covered[nbhd] else math.nan) for nbhd, values in terms.items()}
    coverage = {nbhd: math.fsum(values) for nbhd, values in covered.items()}
    partial = sum(1 for value in coverage.values() if value < 1.0 - SHARE_TOLERANCE)
    if partial:
        logger.warning(f"{partial} neighborhoods have industries without a leave-one-out exposure")
    return bartik, coverage


def build_shift_share(postings: Sequence[PostingRecord], exposures: Mapping[str, float],
                      year: int = 2018) -> ShiftShareInputs:
    counts = industry_counts(postings, year)
    shares = industry_shares(counts)
    loo = leave_one_out_table(counts, exposures)
    bartik, coverage = build_bartik(shares, loo)
    logger.info(f"Bartik instrument built for {len(bartik)} neighborhoods from {len(counts)} "
                f"neighborhood-industry cells")
    return ShiftShareInputs(counts, shares, loo, bartik, coverage)


@dataclass(frozen=True)
class LongDifferenceSpec:
    outcome: str = 'ln_avg_wage'
    exposure: str = 'genai'
    changes: Tuple[str, ...] = ('ln_population', 'nightlight')
    levels: Tuple[str, ...] = ('techreg_2018', 'covid_2018', 'realestate_2018')
    pre_years: Tuple[int, ...] = (2018, 2019)
    post_years: Tuple[int, ...] = (2023, 2024)
    instrument: str = 'bartik_std'

    @staticmethod
    def delta(name: str) -> str:
        return f"d_{name}"

    @property
    def outcome_change(self) -> str:
        return self.delta(self.outcome)

    @property
    def exposure_change(self) -> str:
        return self.delta(self.exposure)

    @property
    def controls(self) -> List[str]:
        return [self.delta(name) for name in self.changes] + list(self.levels)


def build_long_differences(panel: PanelDataset, spec: LongDifferenceSpec = LongDifferenceSpec(),
                           instrument: Optional[Mapping[str, float]] = None,
                           audit: Optional[AuditLog] = None) -> pd.DataFrame:
    """
    One row per neighborhood: post-period mean minus pre-period mean of the
    outcome, exposure and change controls, plus the level controls and the
    instrument; rows with any absent piece are excluded and audited
    """
    frame = panel.frame
    changing = [spec.outcome, spec.exposure, *spec.changes]
    missing = [c for c in changing + list(spec.levels) if c not in frame.columns]
    if missing:
        raise SpecificationError(f"Panel lacks variables for long differences: {missing}")
    pre = frame.loc[frame['year'].isin(spec.pre_years)].groupby('entity_id')[changing].mean()
    post = frame.loc[frame['year'].isin(spec.post_years)].groupby('entity_id')[changing].mean()
    entities = pd.Index(panel.entities, name='entity_id')
    diffs = (post.reindex(entities) - pre.reindex(entities)).rename(columns=spec.delta)
    levels = frame.groupby('entity_id')[list(spec.levels)].first().reindex(entities)
    table = pd.concat([diffs, levels], axis=1)
    if instrument is not None:
        table[spec.instrument] = [instrument.get(entity, math.nan) for entity in entities]
    table = table.reset_index()
    complete = table.drop(columns='entity_id').notna().all(axis=1)
    if audit is not None:
        for entity in table.loc[~complete, 'entity_id']:
            audit.record('long_difference', 'incomplete_row', entity)
    if (~complete).any():
        logger.info(f"Long differences: excluded {int((~complete).sum())} of {len(table)} neighborhoods")
    return table.loc[complete].reset_index(drop=True)


def _cross_section(long_diffs: pd.DataFrame, outcome: str, regressors: Sequence[str]) -> DesignMatrix:
    if len(long_diffs) < len(regressors) + 3:
        raise SpecificationError(f"Need at least {len(regressors) + 3} complete rows, got {len(long_diffs)}")
    X = np.column_stack([np.ones(len(long_diffs))] + [long_diffs[name].to_numpy(dtype=float) for name in regressors])
    return DesignMatrix(y=long_diffs[outcome].to_numpy(dtype=float), X=X, names=('const', *regressors),
                        clusters=long_diffs['entity_id'].to_numpy(), outcome=outcome)


def fit_reduced_form(long_diffs: pd.DataFrame, spec: LongDifferenceSpec = LongDifferenceSpec()) -> FitResult:
    """Change in log wage on the instrument and controls, HC1 standard errors"""
    design = _cross_section(long_diffs, spec.outcome_change, [spec.instrument, *spec.controls])
    fit = fit_ols(design, cov_type='hc1')
    logger.info(f"Reduced form {spec.instrument}: {fit.coefficient(spec.instrument):.4f} "
                f"(p {fit.p_value(spec.instrument):.4f})")
    return fit


def fit_bartik_2sls(long_diffs: pd.DataFrame, spec: LongDifferenceSpec = LongDifferenceSpec()) -> FitResult:
    """Change in log wage on the exposure change instrumented by the Bartik predictor"""
    design = _cross_section(long_diffs, spec.outcome_change,
                            [spec.exposure_change, spec.instrument, *spec.controls])
    fit = fit_2sls(design, endogenous=spec.exposure_change, instrument=spec.instrument, cov_type='hc1')
    logger.info(f"Bartik 2SLS {spec.exposure_change}: {fit.coefficient(spec.exposure_change):.4f}, "
                f"first-stage F {fit.first_stage_f:.2f}")
    return fit


@dataclass(frozen=True)
class BartikEventStudy:
    result: EventStudyResult
    caution: bool


def bartik_event_study(panel: PanelDataset, bartik_std: Mapping[str, float],
                       spec: EventStudySpec = EventStudySpec(), alpha: float = PRETREND_ALPHA) -> BartikEventStudy:
    """
    Event study with the Bartik predictor as treatment; a rejected joint
    pre-trend test sets the caution flag on the IV results
    """
    name = 'bartik_2018'
    panel = attach_entity_values(panel, name, bartik_std, units='SD', standardized=True)
    result = fit_event_study(panel, replace(spec, treatment=name))
    caution = result.pretrend is not None and result.pretrend.p_value < alpha
    if caution:
        logger.warning(f"Bartik event study rejects parallel pre-trends (p = {result.pretrend.p_value:.4f}); "
                       "interpret the structural coefficient with caution")
    return BartikEventStudy(result, caution)
