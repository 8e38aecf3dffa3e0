import pytest
import yaml

from exposure_panel.config_manager import COMMANDS, RunConfigManager, config_hash, default_threads
from exposure_panel.exceptions import ValidationError
from exposure_panel.validation_utils import parse_cli_value, sanitize_path, validate_seed, validate_variable_name


@pytest.fixture
def panel_file(tmp_path):
    path = tmp_path / 'panel.csv'
    path.write_text('entity_id,year\nA,2020\n', encoding='utf-8')
    return str(path)


def write_config(tmp_path, document):
    path = tmp_path / 'run.yml'
    path.write_text(yaml.safe_dump(document), encoding='utf-8')
    return str(path)


def test_defaults_and_seed(panel_file):
    config = RunConfigManager().resolve('did', {'panel': panel_file})
    assert config.seed == 0
    assert config['window'] == [2020, 2024]
    assert config['post_years'] == [2023, 2024]
    assert config['cov_type'] == 'cluster'
    assert list(config.values) == sorted(config.values)


def test_precedence(tmp_path, panel_file):
    path = write_config(tmp_path, {'seed': 11, 'did': {'panel': panel_file, 'cov_type': 'hc1', 'post_years': [2024]}})
    manager = RunConfigManager(path)
    config = manager.resolve('did', {'cov_type': 'unadjusted'})
    assert config['cov_type'] == 'unadjusted'
    assert config['post_years'] == [2024]
    assert config.seed == 11
    assert manager.resolve('did', seed=5).seed == 5


def test_all_errors_are_listed(tmp_path):
    path = write_config(tmp_path, {'bogus': 1, 'did': {'cov_type': 'robust', 'window': 'all'}})
    with pytest.raises(ValidationError) as info:
        RunConfigManager(path).resolve('did', seed=-1)
    messages = ' '.join(info.value.errors)
    for fragment in ('bogus', 'seed', 'panel: required field missing', 'cov_type', 'window'):
        assert fragment in messages
    assert info.value.error_type == 'validation_error'


def test_cross_checks(panel_file):
    with pytest.raises(ValidationError) as info:
        RunConfigManager().resolve('did', {'panel': panel_file, 'post_years': [2026]})
    assert any('outside window' in e for e in info.value.errors)
    with pytest.raises(ValidationError):
        RunConfigManager().resolve('lisa', {'lattice': [6, 6]})


def test_unknown_command():
    with pytest.raises(ValidationError):
        RunConfigManager().resolve('plot')


def test_fingerprint_ignores_threads(panel_file):
    one = RunConfigManager().resolve('did', {'panel': panel_file}, threads=1)
    four = RunConfigManager().resolve('did', {'panel': panel_file}, threads=4)
    assert one.fingerprint == four.fingerprint
    assert 'threads' not in one.to_dict()
    other = RunConfigManager().resolve('did', {'panel': panel_file}, seed=1)
    assert other.fingerprint != one.fingerprint
    assert config_hash({'b': 1, 'a': 2}) == config_hash({'a': 2, 'b': 1})


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv('EXPOSURE_PANEL_THREADS', '3')
    assert default_threads() == 3
    monkeypatch.setenv('EXPOSURE_PANEL_THREADS', 'many')
    assert default_threads() == 1
    monkeypatch.delenv('EXPOSURE_PANEL_THREADS')
    assert default_threads() == 1


def test_every_command_has_a_schema():
    assert set(COMMANDS) == {'ingest', 'exposure', 'did', 'event-study', 'permute', 'bartik',
                             'triple-did', 'fe-interact', 'lisa', 'simulate', 'report'}
    assert RunConfigManager().resolve('simulate').values['kind'] == 'did'


def test_save_config_keeps_backup(tmp_path):
    path = write_config(tmp_path, {'seed': 1})
    manager = RunConfigManager(path)
    assert manager.save_config({'seed': 2, 'report': {'layout': 'table3'}})
    assert manager.load_config()['seed'] == 2
    assert len(list((tmp_path / 'backups').iterdir())) == 1


def test_malformed_yaml(tmp_path):
    path = tmp_path / 'run.yml'
    path.write_text('did: [unclosed', encoding='utf-8')
    with pytest.raises(ValidationError):
        RunConfigManager(str(path)).load_config()


@pytest.mark.parametrize('kind,raw,expected', [
    ('int', ' 7 ', 7),
    ('float', '0.25', 0.25),
    ('bool', 'Yes', True),
    ('int_list', '2023, 2024', [2023, 2024]),
    ('str_list', 'a,b,', ['a', 'b']),
    ('float_map', 'E0=0,E1=1', {'E0': 0.0, 'E1': 1.0}),
])
def test_parse_cli_value(kind, raw, expected):
    assert parse_cli_value(kind, raw) == expected


def test_parse_cli_value_errors():
    with pytest.raises(ValueError):
        parse_cli_value('bool', 'maybe')
    with pytest.raises(ValueError):
        parse_cli_value('float_map', 'E0')


def test_seed_and_path_validation(tmp_path):
    assert validate_seed(2 ** 64 - 1)
    assert not validate_seed(2 ** 64)
    assert not validate_seed(True)
    assert sanitize_path('../escape', str(tmp_path)) is None
    assert sanitize_path('inside.csv', str(tmp_path)) == str(tmp_path / 'inside.csv')
    assert sanitize_path('   ') is None


def test_variable_names_are_validated(panel_file):
    with pytest.raises(ValidationError) as info:
        RunConfigManager().resolve('did', {'panel': panel_file, 'outcome': 'ln wage',
                                           'controls': ['nightlight', '1st_ring']})
    assert any("outcome: invalid variable name 'ln wage'" in e for e in info.value.errors)
    assert any("'1st_ring'" in e for e in info.value.errors)
    assert not validate_variable_name('genai_2018; drop')
    assert validate_variable_name('_private')
