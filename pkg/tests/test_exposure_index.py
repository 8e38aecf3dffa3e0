import math
from datetime import date

import numpy as np
import pytest

from exposure_panel.audit import AuditLog
from exposure_panel.exceptions import ExposureError
from exposure_panel.exposure_index import (
    AssessmentRecord, DEFAULT_LEVEL_WEIGHTS, aggregate_exposure, build_exposure_table, check_rounds,
    expert_consistency, exposure_distribution, load_assessments, model_agreement, score_occupation,
    score_occupations, validate_level_weights, write_assessments,
)


def records(occupation, levels, models=('M1', 'M2', 'M3', 'M4', 'M5')):
    """Assessments filled model by model, rounds 1..5"""
    out = []
    for i, level in enumerate(levels):
        out.append(AssessmentRecord(occupation, models[i // 5], i % 5 + 1, level))
    return out


def test_all_direct_exposure_scores_one():
    assert score_occupation(records('O1', ['E1'] * 25)) == 1.0


def test_no_exposure_scores_zero():
    assert score_occupation(records('O1', ['E0'] * 25)) == 0.0


def test_score_is_mean_of_level_weights():
    assert score_occupation(records('O1', ['E1'] * 13 + ['E0'] * 12)) == pytest.approx(0.52)


def test_score_errors():
    with pytest.raises(ExposureError):
        score_occupation([])
    with pytest.raises(ExposureError):
        score_occupation(records('O1', ['E4']))


def test_level_weights_are_validated():
    with pytest.raises(ExposureError):
        validate_level_weights({'E0': 0.0, 'E1': 1.0, 'E2': 0.5})
    with pytest.raises(ExposureError):
        validate_level_weights({**DEFAULT_LEVEL_WEIGHTS, 'E1': 1.5})
    assert validate_level_weights(DEFAULT_LEVEL_WEIGHTS) == DEFAULT_LEVEL_WEIGHTS


def test_rounds_limited_to_five():
    check_rounds(records('O1', ['E0'] * 25))
    with pytest.raises(ExposureError):
        check_rounds([AssessmentRecord('O1', 'M1', 6, 'E0')])
    with pytest.raises(ExposureError):
        check_rounds([AssessmentRecord('O1', 'M1', 2, 'E0'), AssessmentRecord('O1', 'M1', 2, 'E1')])


def test_at_most_five_assessor_models():
    six = records('O1', ['E1'] * 30, models=('M1', 'M2', 'M3', 'M4', 'M5', 'M6'))
    with pytest.raises(ExposureError) as info:
        check_rounds(six)
    assert '6 assessor models' in info.value.details['errors'][0]
    with pytest.raises(ExposureError):
        model_agreement(six)


def test_score_occupations_is_sorted():
    assessments = records('O2', ['E1'] * 5) + records('O1', ['E2'] * 5)
    assert list(score_occupations(assessments)) == ['O1', 'O2']


def test_weighted_exposure_by_posting_counts(posting):
    scores = {'O1': 0.4, 'O2': 0.8}
    postings = [posting(f"p{i}", 'N1', date(2019, 1, i + 1), occupation_code='O1') for i in range(3)]
    postings.append(posting('p9', 'N1', date(2019, 2, 1), occupation_code='O2'))
    exposure = aggregate_exposure(scores, postings)
    assert exposure[('N1', 2019)] == pytest.approx(0.5)


def test_single_occupation_and_symmetry(posting):
    scores = {'O1': 0.0, 'O2': 1.0, 'O3': 0.3}
    postings = [
        posting('a', 'N1', occupation_code='O3'),
        posting('b', 'N2', occupation_code='O1'),
        posting('c', 'N2', occupation_code='O2'),
    ]
    exposure = aggregate_exposure(scores, postings)
    assert exposure[('N1', 2018)] == pytest.approx(0.3)
    assert exposure[('N2', 2018)] == pytest.approx(0.5)


def test_unscored_postings_are_audited(posting):
    audit = AuditLog()
    exposure = aggregate_exposure({'O1': 1.0}, [posting('a', 'N1', occupation_code='X')], audit)
    assert math.isnan(exposure[('N1', 2018)])
    assert audit.count('exposure', 'unscored_occupation') == 1


def test_exposure_table_frame(posting):
    assessments = records('O1', ['E1'] * 5) + records('O2', ['E0'] * 5) + records('O3', ['E2'] * 5)
    postings = [
        posting('a', 'N1', occupation_code='O1'),
        posting('b', 'N2', occupation_code='O2'),
        posting('c', 'N3', occupation_code='O3'),
        posting('d', 'N3', date(2019, 4, 1), occupation_code='O1'),
    ]
    table = build_exposure_table(assessments, postings)
    frame = table.to_frame(2018)
    assert list(frame.columns) == ['neighborhood_id', 'year', 'exposure', 'exposure_std2018']
    base = frame.loc[frame['year'] == 2018, 'exposure_std2018']
    assert base.mean() == pytest.approx(0.0, abs=1e-12)
    assert base.std(ddof=1) == pytest.approx(1.0)
    summary = exposure_distribution(table)
    assert summary.loc[summary['year'] == 2018, 'count'].item() == 3


def test_identical_and_opposite_models():
    assessments = []
    for j, (a, c) in enumerate([('E0', 'E1'), ('E1', 'E0'), ('E2', 'E3'), ('E1', 'E0')]):
        occupation = f"O{j}"
        assessments.append(AssessmentRecord(occupation, 'A', 1, a))
        assessments.append(AssessmentRecord(occupation, 'B', 1, a))
        assessments.append(AssessmentRecord(occupation, 'C', 1, c))
    matrix = model_agreement(assessments)
    assert matrix.loc['A', 'B'] == pytest.approx(1.0)
    assert matrix.loc['A', 'C'] == pytest.approx(-1.0)
    assert matrix.loc['C', 'C'] == 1.0


def test_constant_model_gives_absent_correlation():
    assessments = []
    for j, level in enumerate(['E0', 'E1', 'E2']):
        assessments.append(AssessmentRecord(f"O{j}", 'A', 1, level))
        assessments.append(AssessmentRecord(f"O{j}", 'B', 1, 'E1'))
    matrix = model_agreement(assessments)
    assert np.isnan(matrix.loc['A', 'B'])


def test_expert_consistency_breaks_ties_low():
    assessments = (records('O1', ['E1'] * 3 + ['E0'] * 2)
                   + records('O2', ['E0', 'E0', 'E3', 'E3', 'E1'])
                   + records('O3', ['E2'] * 5))
    result = expert_consistency(assessments, {'O1': 'E1', 'O2': 'E0', 'O3': 'E3', 'O9': 'E1'})
    assert result == {'n_reviewed': 3, 'n_consistent': 2, 'consistency': pytest.approx(2 / 3)}


def test_assessment_csv(tmp_path):
    path = write_assessments(records('O1', ['E1', 'e2']), str(tmp_path / 'scores.csv'))
    loaded = load_assessments(path)
    assert [r.level for r in loaded] == ['E1', 'E2']
    assert loaded[1].round == 2
