#!/usr/bin/env python3
"""
Exposure Index
Turns occupation-level multi-model GenAI assessments into occupation scores,
aggregates them to neighborhood-years, and reports ensemble agreement.
"""

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .audit import AuditLog
from .exceptions import ExposureError
from .panel_core import PostingRecord

logger = logging.getLogger(__name__)

MAX_ROUNDS = 5
MAX_MODELS = 5
ASSESSMENT_COLUMNS = ('occupation_code', 'model_id', 'round', 'level')


class ExposureLevel(str, Enum):
    E0 = 'E0'  # no exposure
    E1 = 'E1'  # direct exposure
    E2 = 'E2'  # application-augmented exposure
    E3 = 'E3'  # multimodal capability exposure


# Numeric level weights are a configurable assumption.
DEFAULT_LEVEL_WEIGHTS: Dict[str, float] = {'E0': 0.0, 'E1': 1.0, 'E2': 0.5, 'E3': 0.5}


@dataclass(frozen=True)
class AssessmentRecord:
    occupation_code: str
    model_id: str
    round: int
    level: str


@dataclass(frozen=True)
class ExposureTable:
    occupation_scores: Mapping[str, float]
    neighborhood_exposure: Mapping[Tuple[str, int], float]
    weights: Mapping[str, float]
    unscored_postings: int = 0

    def to_frame(self, reference_year: int = 2018) -> pd.DataFrame:
        """neighborhood_id, year, exposure, exposure_std2018"""
        rows = [
            (nbhd, year, value)
            for (nbhd, year), value in sorted(self.neighborhood_exposure.items())
        ]
        frame = pd.DataFrame(rows, columns=['neighborhood_id', 'year', 'exposure'])
        reference = frame.loc[(frame['year'] == reference_year) & frame['exposure'].notna(), 'exposure']
        frame['exposure_std2018'] = np.nan
        if reference.nunique() >= 2:
            mean, sd = reference.mean(), reference.std(ddof=1)
            frame['exposure_std2018'] = (frame['exposure'] - mean) / sd
        else:
            logger.warning(f"Exposure in {reference_year} has fewer than two distinct values; "
                           "exposure_std2018 left absent")
        return frame


def validate_level_weights(level_weights: Mapping[str, float]) -> Dict[str, float]:
    errors = []
    weights = {}
    for level in ExposureLevel:
        if level.value not in level_weights:
            errors.append(f"missing weight for {level.value}")
            continue
        value = float(level_weights[level.value])
        if not 0.0 <= value <= 1.0:
            errors.append(f"weight for {level.value} outside [0,1]: {value}")
        weights[level.value] = value
    extra = sorted(set(level_weights) - {level.value for level in ExposureLevel})
    if extra:
        errors.append(f"unknown levels in weights: {extra}")
    if errors:
        raise ExposureError('Invalid level weights: ' + '; '.join(errors), {'errors': errors})
    return weights


def score_occupation(records: Sequence[AssessmentRecord],
                     level_weights: Mapping[str, float] = DEFAULT_LEVEL_WEIGHTS) -> float:
    """
    Mean level weight over every available (model, round) assessment

    Raises:
        ExposureError: empty record set or a level outside E0..E3
    """
    if not records:
        raise ExposureError('Cannot score an occupation without assessment records')
    weights = validate_level_weights(level_weights)
    total = []
    for record in records:
        if record.level not in weights:
            raise ExposureError(
                f"Unknown exposure level {record.level!r} for occupation {record.occupation_code}",
                {'level': record.level, 'occupation_code': record.occupation_code},
            )
        total.append(weights[record.level])
    return math.fsum(total) / len(total)


def _group_by_occupation(assessments: Iterable[AssessmentRecord]) -> Dict[str, List[AssessmentRecord]]:
    grouped: Dict[str, List[AssessmentRecord]] = defaultdict(list)
    for record in assessments:
        grouped[record.occupation_code].append(record)
    return grouped


def check_rounds(assessments: Iterable[AssessmentRecord]) -> None:
    """At most five assessor models, and at most five rounds (numbered 1..5) per (occupation, model)"""
    rounds: Dict[Tuple[str, str], set] = defaultdict(set)
    models = set()
    errors = []
    for record in assessments:
        models.add(record.model_id)
        if not 1 <= int(record.round) <= MAX_ROUNDS:
            errors.append(f"{record.occupation_code}/{record.model_id}: round {record.round} outside 1..{MAX_ROUNDS}")
        key = (record.occupation_code, record.model_id)
        if record.round in rounds[key]:
            errors.append(f"{record.occupation_code}/{record.model_id}: duplicate round {record.round}")
        rounds[key].add(record.round)
    if len(models) > MAX_MODELS:
        errors.append(f"{len(models)} assessor models, expected at most {MAX_MODELS}: {sorted(models)}")
    if errors:
        raise ExposureError(f"{len(errors)} assessment violation(s)", {'errors': errors[:50]})


def score_occupations(assessments: Sequence[AssessmentRecord],
                      level_weights: Mapping[str, float] = DEFAULT_LEVEL_WEIGHTS) -> Dict[str, float]:
    check_rounds(assessments)
    scores = {
        occupation: score_occupation(records, level_weights)
        for occupation, records in sorted(_group_by_occupation(assessments).items())
    }
    logger.info(f"Scored {len(scores)} occupations")
    return scores


def aggregate_exposure(occupation_scores: Mapping[str, float],
                       postings: Iterable[PostingRecord],
                       audit: Optional[AuditLog] = None) -> Dict[Tuple[str, int], float]:
    """
    Posting-count weighted mean of occupation scores per neighborhood-year

    Postings whose occupation has no score are counted in the audit log and
    excluded. Neighborhood-years without any scored posting get NaN.
    """
    audit = audit if audit is not None else AuditLog()
    counts: Dict[Tuple[str, int], Counter] = defaultdict(Counter)
    for record in postings:
        if record.posting_date is None:
            continue
        key = (record.neighborhood_id, record.year)
        if record.occupation_code not in occupation_scores:
            audit.record('exposure', 'unscored_occupation', record.posting_id, record.occupation_code)
            counts.setdefault(key, Counter())
            continue
        counts[key][record.occupation_code] += 1

    exposure = {}
    for key in sorted(counts):
        by_occupation = counts[key]
        n = sum(by_occupation.values())
        if n == 0:
            exposure[key] = math.nan
            continue
        exposure[key] = math.fsum(
            count * occupation_scores[code] for code, count in sorted(by_occupation.items())
        ) / n
    return exposure


def build_exposure_table(assessments: Sequence[AssessmentRecord], postings: Sequence[PostingRecord],
                         level_weights: Mapping[str, float] = DEFAULT_LEVEL_WEIGHTS,
                         audit: Optional[AuditLog] = None) -> ExposureTable:
    audit = audit if audit is not None else AuditLog()
    weights = validate_level_weights(level_weights)
    scores = score_occupations(assessments, weights)
    before = audit.count('exposure', 'unscored_occupation')
    exposure = aggregate_exposure(scores, postings, audit)
    unscored = audit.count('exposure', 'unscored_occupation') - before
    if unscored:
        logger.warning(f"{unscored} postings carry occupation codes without scores")
    return ExposureTable(scores, exposure, weights, unscored)


def model_agreement(assessments: Sequence[AssessmentRecord],
                    level_weights: Mapping[str, float] = DEFAULT_LEVEL_WEIGHTS,
                    min_occupations: int = 3) -> pd.DataFrame:
    """
    Pairwise Pearson correlation of per-model mean occupation scores

    Entries are NaN when a pair shares fewer than `min_occupations`
    occupations or either model's scores are constant on the shared set.
    """
    check_rounds(assessments)
    weights = validate_level_weights(level_weights)
    per_model: Dict[str, Dict[str, List[float]]] = defaultdict(lambda: defaultdict(list))
    for record in assessments:
        if record.level not in weights:
            raise ExposureError(f"Unknown exposure level {record.level!r}")
        per_model[record.model_id][record.occupation_code].append(weights[record.level])
    means = {
        model: {occ: math.fsum(v) / len(v) for occ, v in occupations.items()}
        for model, occupations in per_model.items()
    }
    models = sorted(means)
    matrix = pd.DataFrame(np.nan, index=models, columns=models)
    for i, a in enumerate(models):
        matrix.loc[a, a] = 1.0
        for b in models[i + 1:]:
            shared = sorted(set(means[a]) & set(means[b]))
            if len(shared) < min_occupations:
                continue
            x = np.array([means[a][occ] for occ in shared])
            y = np.array([means[b][occ] for occ in shared])
            if np.ptp(x) == 0 or np.ptp(y) == 0:
                continue
            r = float(np.corrcoef(x, y)[0, 1])
            matrix.loc[a, b] = matrix.loc[b, a] = r
    return matrix


def expert_consistency(assessments: Sequence[AssessmentRecord],
                       expert_levels: Mapping[str, str]) -> Dict[str, float]:
    """
    Share of reviewed occupations whose ensemble modal level matches the expert label

    Ties in the modal level break toward the lower level.
    """
    grouped = _group_by_occupation(assessments)
    reviewed = sorted(code for code in expert_levels if code in grouped)
    if not reviewed:
        raise ExposureError('No expert-reviewed occupation has assessments')
    order = [level.value for level in ExposureLevel]
    matches = 0
    for code in reviewed:
        tally = Counter(record.level for record in grouped[code])
        modal = max(order, key=lambda level: (tally.get(level, 0), -order.index(level)))
        matches += modal == expert_levels[code]
    return {'n_reviewed': len(reviewed), 'n_consistent': matches, 'consistency': matches / len(reviewed)}


def exposure_distribution(table: ExposureTable) -> pd.DataFrame:
    """Per-year summary of neighborhood exposure"""
    frame = table.to_frame()
    summary = frame.groupby('year')['exposure'].describe()
    return summary.rename(columns={'25%': 'q25', '50%': 'median', '75%': 'q75'}).reset_index()


def load_assessments(path: str) -> List[AssessmentRecord]:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    missing = [column for column in ASSESSMENT_COLUMNS if column not in frame.columns]
    if missing:
        raise ExposureError(f"assessment file {path} lacks columns: {missing}")
    records = []
    for row in frame.itertuples(index=False):
        try:
            round_number = int(row.round)
        except ValueError:
            raise ExposureError(f"Non-integer round {row.round!r} for occupation {row.occupation_code}")
        records.append(AssessmentRecord(row.occupation_code.strip(), row.model_id.strip(),
                                        round_number, row.level.strip().upper()))
    logger.info(f"Loaded {len(records)} assessments from {path}")
    return records


def write_assessments(records: Iterable[AssessmentRecord], path: str) -> str:
    rows = [(r.occupation_code, r.model_id, r.round, r.level) for r in records]
    pd.DataFrame(rows, columns=list(ASSESSMENT_COLUMNS)).to_csv(path, index=False, encoding='utf-8')
    return path
