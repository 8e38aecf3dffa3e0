import os

import pandas as pd
import pytest

from exposure_panel.cli import EXIT_ANALYSIS_ERROR, EXIT_OK, EXIT_VALIDATION_ERROR, build_parser, main
from exposure_panel.reporting import load_json


@pytest.fixture(scope='module')
def simulated(tmp_path_factory):
    out = str(tmp_path_factory.mktemp('sim'))
    assert main(['simulate', '--out', out, '--seed', '3', '--n-entities', '60']) == EXIT_OK
    return out, os.path.join(out, 'simulate', 'panel.csv')


def read(out, command, name='report.json'):
    return load_json(os.path.join(out, command, name))


def test_parser_exposes_per_key_flags():
    args = build_parser().parse_args(['permute', '--B', '50', '--post-years', '2023,2024', '--threads', '2'])
    assert args.override_B == '50'
    assert args.override_post_years == '2023,2024'
    assert args.threads == 2


def test_did_permute_report_chain(simulated, tmp_path):
    _, panel = simulated
    out = str(tmp_path / 'out')
    assert main(['did', '--out', out, '--panel', panel]) == EXIT_OK
    assert main(['event-study', '--out', out, '--panel', panel]) == EXIT_OK
    assert main(['permute', '--out', out, '--panel', panel, '--B', '20', '--seed', '9']) == EXIT_OK
    assert main(['report', '--out', out]) == EXIT_OK

    did = read(out, 'did')
    assert did['status'] == 'ok'
    assert did['results']['treatment_term'] == 'genai_2018:post'
    assert did['results']['fit']['n_clusters'] == 60
    assert 'coefficients.csv' in did['side_tables']

    permute = read(out, 'permute')
    assert permute['results']['B'] == 20
    assert permute['results']['seed'] == 9
    assert len(pd.read_csv(os.path.join(out, 'permute', 'placebo.csv'))) == 20

    table = read(out, 'report')['tables']['table2']
    assert 'genai_2018:post' in table
    assert 'Permutation p' in table
    assert 'Pre-trend joint test (p)' in table
    with open(os.path.join(out, 'report', 'table2.txt'), encoding='utf-8') as f:
        assert f.read() == table
    assert os.path.exists(os.path.join(out, 'runs.db'))


def test_reports_do_not_depend_on_threads_or_output_root(simulated, tmp_path):
    _, panel = simulated
    texts = []
    for name, threads in (('one', '1'), ('two', '4')):
        out = str(tmp_path / name)
        assert main(['permute', '--out', out, '--panel', panel, '--B', '12', '--threads', threads]) == EXIT_OK
        with open(os.path.join(out, 'permute', 'report.json'), encoding='utf-8') as f:
            texts.append(f.read())
    assert texts[0] == texts[1]


def test_missing_required_field_exits_2(tmp_path):
    out = str(tmp_path / 'out')
    assert main(['did', '--out', out]) == EXIT_VALIDATION_ERROR
    record = load_json(os.path.join(out, 'error.json'))
    assert record['status'] == 'error'
    assert record['error_type'] == 'validation_error'
    assert any('panel' in error for error in record['details']['errors'])


def test_unparseable_override_exits_2(simulated, tmp_path):
    _, panel = simulated
    assert main(['permute', '--out', str(tmp_path), '--panel', panel, '--B', 'many']) == EXIT_VALIDATION_ERROR


def test_analysis_failure_exits_1(simulated, tmp_path):
    _, panel = simulated
    out = str(tmp_path / 'out')
    assert main(['did', '--out', out, '--panel', panel, '--controls', 'absent_control']) == EXIT_ANALYSIS_ERROR
    assert load_json(os.path.join(out, 'error.json'))['error_type'] == 'specification_error'


def test_report_without_sources_is_a_layout_error(tmp_path):
    out = str(tmp_path / 'out')
    assert main(['report', '--out', out, '--layout', 'table3']) == EXIT_ANALYSIS_ERROR
    assert load_json(os.path.join(out, 'error.json'))['details']['missing_report'] == 'fe-interact'


def test_postings_to_exposure_pipeline(tmp_path):
    out = str(tmp_path / 'out')
    assert main(['simulate', '--out', out, '--kind', 'postings', '--n-entities', '8', '--seed', '2']) == EXIT_OK
    postings = os.path.join(out, 'simulate', 'postings.csv')
    assessments = os.path.join(out, 'simulate', 'assessments.csv')
    assert main(['ingest', '--out', out, '--postings', postings]) == EXIT_OK
    ingest = read(out, 'ingest')
    assert ingest['results']['entities'] == 8
    for total in ingest['results']['job_share_sum_by_year'].values():
        assert total == pytest.approx(1.0)
    panel = os.path.join(out, 'ingest', 'panel.csv')
    assert main(['exposure', '--out', out, '--assessments', assessments, '--postings', postings,
                 '--panel', panel]) == EXIT_OK
    frame = pd.read_csv(os.path.join(out, 'exposure', 'panel.csv'))
    assert {'exposure', 'genai', 'genai_2018', 'education_2018', 'heat_2018', 'techreg_2018'} <= set(frame.columns)
    assert read(out, 'exposure')['results']['occupations_scored'] == 40


def test_spatial_simulation_feeds_lisa(tmp_path):
    out = str(tmp_path / 'out')
    assert main(['simulate', '--out', out, '--kind', 'spatial', '--noise-sd', '0.05']) == EXIT_OK
    values = os.path.join(out, 'simulate', 'values.csv')
    assert main(['lisa', '--out', out, '--values', values, '--lattice', '6,6', '--permutations', '199']) == EXIT_OK
    lisa = pd.read_csv(os.path.join(out, 'lisa', 'lisa_out.csv'))
    assert len(lisa) == 36
    assert set(lisa.columns) >= {'unit_id', 'local_i', 'pseudo_p', 'category'}
