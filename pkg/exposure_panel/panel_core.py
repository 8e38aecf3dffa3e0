#!/usr/bin/env python3
"""
Panel Core
Neighborhood-year panel data model and the posting-level preparation rules:
deduplication, wage preparation, education mapping, aggregation and
standardization.
"""

import logging
import math
import os
import re
from dataclasses import dataclass, field, replace
from datetime import date
from enum import Enum
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .audit import AuditLog
from .exceptions import DataPreparationError, StandardizationError, UnknownCategoryError

logger = logging.getLogger(__name__)

# Primary-industry sections A..R (public administration and international
# organisations are outside the posting universe)
INDUSTRY_CODES = frozenset('ABCDEFGHIJKLMNOPQR')

WAGE_FLOOR = 1_000.0
WAGE_CAP = 280_000.0

POSTING_COLUMNS = (
    'posting_id', 'company_id', 'neighborhood_id', 'posting_date', 'occupation_code',
    'industry_code', 'compensation_annual', 'education_requirement',
)

PANEL_KEYS = ('entity_id', 'year')


class EducationCategory(str, Enum):
    UNRESTRICTED = 'unrestricted'
    JUNIOR_MIDDLE_OR_BELOW = 'junior_middle_or_below'
    HIGH_SCHOOL_VOCATIONAL = 'high_school_vocational'
    ASSOCIATE = 'associate'
    BACHELOR = 'bachelor'
    MASTER = 'master'
    DOCTORATE = 'doctorate'


class EducationYears(NamedTuple):
    category: EducationCategory
    years: int


EDUCATION_TABLE: Tuple[EducationYears, ...] = (
    EducationYears(EducationCategory.UNRESTRICTED, 0),
    EducationYears(EducationCategory.JUNIOR_MIDDLE_OR_BELOW, 9),
    EducationYears(EducationCategory.HIGH_SCHOOL_VOCATIONAL, 12),
    EducationYears(EducationCategory.ASSOCIATE, 15),
    EducationYears(EducationCategory.BACHELOR, 16),
    EducationYears(EducationCategory.MASTER, 19),
    EducationYears(EducationCategory.DOCTORATE, 23),
)

_EDUCATION_LOOKUP = {entry.category.value: entry.years for entry in EDUCATION_TABLE}

_EDUCATION_ALIASES = {
    'none': 'unrestricted',
    'no_requirement': 'unrestricted',
    'junior_middle_school_or_below': 'junior_middle_or_below',
    'junior_middle_school': 'junior_middle_or_below',
    'high_school': 'high_school_vocational',
    'vocational': 'high_school_vocational',
    'high_school_vocational_technical': 'high_school_vocational',
    'associate_degree': 'associate',
    'bachelors': 'bachelor',
    'bachelor_degree': 'bachelor',
    'masters': 'master',
    'master_degree': 'master',
    'doctoral': 'doctorate',
    'phd': 'doctorate',
}

HIGH_SKILL_YEARS = 16


@dataclass(frozen=True)
class PostingRecord:
    """One recruitment posting, already tagged with its neighborhood"""

    posting_id: str
    company_id: str
    neighborhood_id: str
    posting_date: Optional[date]
    occupation_code: str
    industry_code: str
    compensation_total_annual: Optional[float]
    education_requirement: str

    @property
    def month(self) -> Optional[str]:
        if self.posting_date is None:
            return None
        return f"{self.posting_date.year:04d}-{self.posting_date.month:02d}"

    @property
    def year(self) -> Optional[int]:
        return None if self.posting_date is None else self.posting_date.year


@dataclass(frozen=True)
class VariableMeta:
    units: str = ''
    standardized: bool = False


@dataclass(frozen=True)
class PreparedWage:
    """Outcome of wage preparation for one posting"""

    monthly: Optional[float]
    status: str

    @property
    def accepted(self) -> bool:
        return self.monthly is not None


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """
    Long-format entity x year panel

    The frame holds one row per (entity_id, year) and one float column per
    variable; absent values are NaN, never zero.
    """

    frame: pd.DataFrame
    metadata: Mapping[str, VariableMeta] = field(default_factory=dict)
    window: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        frame = self.frame
        missing = [key for key in PANEL_KEYS if key not in frame.columns]
        if missing:
            raise DataPreparationError(f"Panel frame lacks key columns: {missing}")
        if frame.duplicated(list(PANEL_KEYS)).any():
            dupes = frame.loc[frame.duplicated(list(PANEL_KEYS), keep=False), list(PANEL_KEYS)]
            raise DataPreparationError(
                f"Duplicate (entity_id, year) pairs in panel: {len(dupes)} rows",
                {'examples': dupes.head(5).astype(str).values.tolist()},
            )
        if self.window is not None and len(frame):
            lo, hi = self.window
            years = frame['year']
            if (years < lo).any() or (years > hi).any():
                raise DataPreparationError(
                    f"Panel years outside declared window {lo}-{hi}: "
                    f"{sorted(set(years[(years < lo) | (years > hi)].tolist()))}"
                )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, metadata: Optional[Mapping[str, VariableMeta]] = None,
                   window: Optional[Tuple[int, int]] = None) -> 'PanelDataset':
        frame = frame.copy()
        frame['entity_id'] = frame['entity_id'].astype(str)
        frame['year'] = frame['year'].astype(int)
        for column in frame.columns:
            if column not in PANEL_KEYS:
                frame[column] = pd.to_numeric(frame[column], errors='coerce').astype(float)
        frame = frame.sort_values(list(PANEL_KEYS), kind='mergesort').reset_index(drop=True)
        meta = {name: VariableMeta() for name in frame.columns if name not in PANEL_KEYS}
        meta.update(metadata or {})
        return cls(frame, meta, window)

    @property
    def variables(self) -> List[str]:
        return [c for c in self.frame.columns if c not in PANEL_KEYS]

    @property
    def entities(self) -> List[str]:
        return sorted(self.frame['entity_id'].unique().tolist())

    @property
    def years(self) -> List[int]:
        return sorted(int(y) for y in self.frame['year'].unique())

    @property
    def observations(self) -> List[Tuple[str, int, Dict[str, float]]]:
        variables = self.variables
        matrix = self.frame[variables].to_numpy(dtype=float)
        return [
            (entity, int(year), dict(zip(variables, row.tolist())))
            for entity, year, row in zip(self.frame['entity_id'], self.frame['year'], matrix)
        ]

    def values(self, name: str) -> np.ndarray:
        if name not in self.frame.columns:
            raise DataPreparationError(f"Variable not in panel: {name}")
        return self.frame[name].to_numpy(dtype=float)

    def with_variable(self, name: str, values: Sequence[float], units: str = '',
                      standardized: bool = False) -> 'PanelDataset':
        frame = self.frame.copy()
        frame[name] = np.asarray(values, dtype=float)
        metadata = dict(self.metadata)
        metadata[name] = VariableMeta(units=units, standardized=standardized)
        return replace(self, frame=frame, metadata=metadata)

    def subset(self, years: Optional[Iterable[int]] = None,
               entities: Optional[Iterable[str]] = None) -> 'PanelDataset':
        mask = np.ones(len(self.frame), dtype=bool)
        years = None if years is None else [int(y) for y in years]
        if years is not None:
            mask &= self.frame['year'].isin(list(years)).to_numpy()
        if entities is not None:
            mask &= self.frame['entity_id'].isin(list(entities)).to_numpy()
        window = self.window
        if years:
            window = (min(years), max(years))
        return PanelDataset(self.frame.loc[mask].reset_index(drop=True), dict(self.metadata), window)

    def to_frame(self) -> pd.DataFrame:
        return self.frame.copy()


def parse_posting_date(raw: str) -> Optional[date]:
    """Parse an ISO date; None when malformed"""
    try:
        return date.fromisoformat(raw.strip())
    except (ValueError, AttributeError):
        return None


def normalize_education(category) -> str:
    if isinstance(category, EducationCategory):
        return category.value
    if not isinstance(category, str):
        raise UnknownCategoryError(f"Unknown education category: {category!r}")
    key = category.strip().lower().replace("'", '')
    key = re.sub(r'[\s/\-]+', '_', key)
    key = _EDUCATION_ALIASES.get(key, key)
    if key not in _EDUCATION_LOOKUP:
        raise UnknownCategoryError(
            f"Unknown education category: {category!r}",
            {'category': category, 'known': sorted(_EDUCATION_LOOKUP)},
        )
    return key


def map_education(category) -> int:
    """
    Map an education requirement to years of schooling

    Args:
        category: EducationCategory or its label (common spellings accepted)

    Returns:
        Years of schooling from the seven-entry table

    Raises:
        UnknownCategoryError: category is not recognized; nothing is imputed
    """
    return _EDUCATION_LOOKUP[normalize_education(category)]


def load_postings(path: str, audit: Optional[AuditLog] = None) -> List[PostingRecord]:
    """
    Read postings.csv into PostingRecord objects

    Rows with missing key fields, unknown industry or education codes, or
    non-positive compensation are rejected to the audit log. Malformed dates
    are kept with posting_date=None so deduplication can reject and count them.
    """
    audit = audit if audit is not None else AuditLog()
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    missing = [column for column in POSTING_COLUMNS if column not in frame.columns]
    if missing:
        raise DataPreparationError(f"postings file {path} lacks columns: {missing}")

    records = []
    for row in frame.itertuples(index=False):
        posting_id = row.posting_id.strip()
        keys = (row.posting_id, row.company_id, row.neighborhood_id, row.occupation_code, row.industry_code)
        if any(not value.strip() for value in keys):
            audit.record('load', 'missing_key_field', posting_id or None)
            continue
        industry = row.industry_code.strip().upper()
        if industry not in INDUSTRY_CODES:
            audit.record('load', 'unknown_industry', posting_id, industry)
            continue
        try:
            normalize_education(row.education_requirement)
        except UnknownCategoryError:
            audit.record('load', 'unknown_education', posting_id, row.education_requirement)
            continue

        compensation = None
        raw_comp = row.compensation_annual.strip()
        if raw_comp:
            try:
                compensation = float(raw_comp)
            except ValueError:
                compensation = math.nan
            if not math.isfinite(compensation) or compensation <= 0:
                audit.record('load', 'invalid_compensation', posting_id, raw_comp)
                continue

        records.append(PostingRecord(
            posting_id=posting_id,
            company_id=row.company_id.strip(),
            neighborhood_id=row.neighborhood_id.strip(),
            posting_date=parse_posting_date(row.posting_date),
            occupation_code=row.occupation_code.strip(),
            industry_code=industry,
            compensation_total_annual=compensation,
            education_requirement=row.education_requirement.strip(),
        ))

    logger.info(f"Loaded {len(records)} postings from {path} ({audit.count('load')} rejected)")
    return records


def write_postings(records: Iterable[PostingRecord], path: str) -> str:
    rows = [{
        'posting_id': r.posting_id,
        'company_id': r.company_id,
        'neighborhood_id': r.neighborhood_id,
        'posting_date': r.posting_date.isoformat() if r.posting_date else '',
        'occupation_code': r.occupation_code,
        'industry_code': r.industry_code,
        'compensation_annual': '' if r.compensation_total_annual is None else repr(r.compensation_total_annual),
        'education_requirement': r.education_requirement,
    } for r in records]
    pd.DataFrame(rows, columns=list(POSTING_COLUMNS)).to_csv(path, index=False, encoding='utf-8')
    return path


def dedupe_postings(postings: Sequence[PostingRecord],
                    audit: Optional[AuditLog] = None) -> List[PostingRecord]:
    """
    Keep the first unique posting per company per month

    The content key is (occupation_code, neighborhood_id). Among duplicates
    the earliest posting_date survives (ties: first in input order). Output
    keeps the input order of survivors. Records without a valid date are
    rejected and counted.
    """
    audit = audit if audit is not None else AuditLog()
    winners: Dict[Tuple[str, str, str, str], Tuple[date, int]] = {}
    for position, record in enumerate(postings):
        if record.posting_date is None:
            audit.record('dedupe', 'malformed_date', record.posting_id)
            continue
        key = (record.company_id, record.month, record.occupation_code, record.neighborhood_id)
        current = winners.get(key)
        if current is None or record.posting_date < current[0]:
            winners[key] = (record.posting_date, position)

    keep = {position for _, position in winners.values()}
    survivors = []
    for position, record in enumerate(postings):
        if position in keep:
            survivors.append(record)
        elif record.posting_date is not None:
            audit.record('dedupe', 'duplicate', record.posting_id)
    logger.info(f"Deduplication kept {len(survivors)} of {len(postings)} postings")
    return survivors


def prepare_wage(compensation_total_annual: Optional[float], mode: str = 'exclude') -> PreparedWage:
    """
    Convert annual compensation to a monthly wage and apply the fixed bounds

    Args:
        compensation_total_annual: Annual total (13th-month pay and bonuses included)
        mode: 'exclude' drops values outside [1,000, 280,000]; 'winsorize' clips them

    Returns:
        PreparedWage with the monthly value (None when rejected) and a status code
    """
    if compensation_total_annual is None or not math.isfinite(compensation_total_annual) \
            or compensation_total_annual <= 0:
        return PreparedWage(None, 'missing_compensation')
    monthly = compensation_total_annual / 12.0
    if mode == 'winsorize':
        if monthly < WAGE_FLOOR:
            return PreparedWage(WAGE_FLOOR, 'winsorized_low')
        if monthly > WAGE_CAP:
            return PreparedWage(WAGE_CAP, 'winsorized_high')
        return PreparedWage(monthly, 'accepted')
    if mode != 'exclude':
        raise DataPreparationError(f"Unknown wage mode: {mode}")
    if monthly < WAGE_FLOOR:
        return PreparedWage(None, 'below_floor')
    if monthly > WAGE_CAP:
        return PreparedWage(None, 'above_cap')
    return PreparedWage(monthly, 'accepted')


def _min_max(values: pd.Series) -> pd.Series:
    lo, hi = values.min(), values.max()
    if not np.isfinite(lo) or hi == lo:
        return pd.Series(0.0, index=values.index)
    return (values - lo) / (hi - lo)


def aggregate_neighborhood_year(postings: Sequence[PostingRecord],
                                neighborhoods: Optional[Iterable[str]] = None,
                                years: Optional[Iterable[int]] = None,
                                index_scope: str = 'per-year',
                                wage_mode: str = 'exclude',
                                audit: Optional[AuditLog] = None) -> PanelDataset:
    """
    Aggregate deduplicated postings to neighborhood-year rows

    Emits posting_count, job_share, job_index, avg_wage, ln_avg_wage,
    avg_education_years and high_skill_share. Every neighborhood x year
    combination gets a row; zero-posting rows carry count 0 and absent
    wage/education values.
    """
    if index_scope not in ('per-year', 'pooled'):
        raise DataPreparationError(f"Unknown job_index scope: {index_scope}")
    audit = audit if audit is not None else AuditLog()
    year_set = set(int(y) for y in years) if years is not None else None
    entity_set = set(neighborhoods) if neighborhoods is not None else None

    rows = []
    for record in postings:
        if record.posting_date is None:
            audit.record('aggregate', 'malformed_date', record.posting_id)
            continue
        if year_set is not None and record.year not in year_set:
            audit.record('aggregate', 'out_of_window', record.posting_id, str(record.year))
            continue
        if entity_set is not None and record.neighborhood_id not in entity_set:
            audit.record('aggregate', 'unknown_neighborhood', record.posting_id, record.neighborhood_id)
            continue
        wage = prepare_wage(record.compensation_total_annual, wage_mode)
        if not wage.accepted:
            audit.record('aggregate', wage.status, record.posting_id)
        years_of_schooling = map_education(record.education_requirement)
        rows.append((
            record.neighborhood_id, record.year,
            wage.monthly if wage.accepted else np.nan,
            float(years_of_schooling),
            1.0 if years_of_schooling >= HIGH_SKILL_YEARS else 0.0,
        ))

    detail = pd.DataFrame(rows, columns=['entity_id', 'year', 'monthly_wage', 'education_years', 'high_skill'])
    grouped = detail.groupby(['entity_id', 'year'], sort=True).agg(
        posting_count=('education_years', 'size'),
        avg_wage=('monthly_wage', 'mean'),
        avg_education_years=('education_years', 'mean'),
        high_skill_share=('high_skill', 'mean'),
    )

    entity_universe = sorted(entity_set if entity_set is not None else set(detail['entity_id']))
    if year_set is not None:
        year_universe = sorted(year_set)
    elif len(detail):
        year_universe = list(range(int(detail['year'].min()), int(detail['year'].max()) + 1))
    else:
        year_universe = []
    index = pd.MultiIndex.from_product([entity_universe, year_universe], names=['entity_id', 'year'])
    table = grouped.reindex(index)
    table['posting_count'] = table['posting_count'].fillna(0.0).astype(float)
    table = table.reset_index()

    year_totals = table.groupby('year')['posting_count'].transform('sum')
    table['job_share'] = np.where(year_totals > 0, table['posting_count'] / year_totals.where(year_totals > 0, 1.0), np.nan)
    log_counts = np.log1p(table['posting_count'])
    if index_scope == 'per-year':
        table['job_index'] = log_counts.groupby(table['year']).transform(_min_max)
    else:
        table['job_index'] = _min_max(log_counts)
    table['ln_avg_wage'] = np.log(table['avg_wage'])

    columns = ['entity_id', 'year', 'posting_count', 'job_share', 'job_index', 'avg_wage',
               'ln_avg_wage', 'avg_education_years', 'high_skill_share']
    metadata = {
        'posting_count': VariableMeta('postings'),
        'job_share': VariableMeta('share'),
        'job_index': VariableMeta('index [0,1]'),
        'avg_wage': VariableMeta('RMB/month'),
        'ln_avg_wage': VariableMeta('log RMB/month'),
        'avg_education_years': VariableMeta('years'),
        'high_skill_share': VariableMeta('share'),
    }
    window = (year_universe[0], year_universe[-1]) if year_universe else None
    logger.info(f"Aggregated {len(rows)} postings into {len(table)} neighborhood-year rows")
    return PanelDataset.from_frame(table[columns], metadata, window)


def standardize(panel: PanelDataset, variable: str, scope: str = 'pooled', year: int = 2018,
                target: Optional[str] = None) -> PanelDataset:
    """
    Z-score a panel variable with the sample SD (n-1)

    Args:
        panel: Input panel
        variable: Variable to standardize
        scope: 'pooled', 'per-year', or 'at-year' (standardize the cross-section
            of `year` and broadcast each entity's value to all its rows)
        year: Reference year for scope 'at-year'
        target: Output variable name (defaults to overwriting `variable`)
    """
    values = panel.values(variable)
    frame = panel.frame
    out_name = target or variable

    def zscore(x: np.ndarray, label: str) -> np.ndarray:
        finite = x[np.isfinite(x)]
        if len(np.unique(finite)) < 2:
            raise StandardizationError(
                f"Cannot standardize '{variable}' ({label}): fewer than two distinct finite values",
                {'variable': variable},
            )
        sd = finite.std(ddof=1)
        if not sd > 0:
            raise StandardizationError(f"Cannot standardize '{variable}' ({label}): zero variance",
                                       {'variable': variable})
        return (x - finite.mean()) / sd

    if scope == 'pooled':
        result = zscore(values, 'pooled')
    elif scope == 'per-year':
        result = np.full(len(values), np.nan)
        for yr, positions in frame.groupby('year').indices.items():
            result[positions] = zscore(values[positions], f"year {yr}")
    elif scope == 'at-year':
        positions = np.flatnonzero(frame['year'].to_numpy() == year)
        if not len(positions):
            raise StandardizationError(f"Cannot standardize '{variable}': no rows in {year}",
                                       {'variable': variable})
        cross = zscore(values[positions], f"year {year}")
        lookup = dict(zip(frame['entity_id'].to_numpy()[positions], cross))
        result = np.array([lookup.get(entity, np.nan) for entity in frame['entity_id']], dtype=float)
    else:
        raise StandardizationError(f"Unknown standardization scope: {scope}")

    units = panel.metadata.get(variable, VariableMeta()).units
    return panel.with_variable(out_name, result, units=f"SD of {units}".strip(), standardized=True)


def attach_entity_values(panel: PanelDataset, name: str, mapping: Mapping[str, float],
                         units: str = '', standardized: bool = False) -> PanelDataset:
    """Broadcast a per-entity (pre-determined) value to every year; absent where unmapped"""
    values = [mapping.get(entity, np.nan) for entity in panel.frame['entity_id']]
    values = [np.nan if v is None else float(v) for v in values]
    return panel.with_variable(name, values, units=units, standardized=standardized)


def read_panel_csv(path: str, window: Optional[Tuple[int, int]] = None) -> PanelDataset:
    frame = pd.read_csv(path, dtype={'entity_id': str}, encoding='utf-8')
    missing = [key for key in PANEL_KEYS if key not in frame.columns]
    if missing:
        raise DataPreparationError(f"panel file {path} lacks columns: {missing}")
    logger.info(f"Read panel {path}: {len(frame)} rows, {frame['entity_id'].nunique()} entities")
    return PanelDataset.from_frame(frame, window=window)


def write_panel_csv(panel: PanelDataset, path: str) -> str:
    """Write entity_id,year,<variables>; missing values as empty cells"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    frame = panel.frame.sort_values(list(PANEL_KEYS), kind='mergesort')
    frame.to_csv(path, index=False, na_rep='', encoding='utf-8', float_format='%.17g')
    logger.info(f"Panel written: {path}")
    return path
