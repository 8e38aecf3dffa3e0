#!/usr/bin/env python3
"""
Run Configuration Manager
Loads, validates, merges and saves the YAML run configuration for every CLI
command, and fingerprints the merged result for provenance.
"""

import hashlib
import json
import logging
import os
import shutil
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Dict, List, Mapping, Optional, Tuple

import yaml

from . import __version__
from .causal_designs import DEFAULT_CONFOUNDERS, DEFAULT_CONTROLS
from .exceptions import ValidationError
from .exposure_index import DEFAULT_LEVEL_WEIGHTS
from .validation_utils import (
    validate_command_config, validate_seed, validate_threads, validate_variable_name, validate_year_pair,
)

logger = logging.getLogger(__name__)

THREADS_ENV = 'EXPOSURE_PANEL_THREADS'
GLOBAL_KEYS = ('seed', 'threads')
# Keys that name panel columns
VARIABLE_KEYS = ('outcome', 'treatment', 'confounders', 'controls', 'moderators', 'exposure_variable', 'changes',
                 'levels', 'exposure', 'education', 'heat', 'standardized_controls', 'raw_controls', 'variable')


@dataclass(frozen=True)
class ConfigKey:
    name: str
    kind: str
    default: Any = None
    required: bool = False
    choices: Tuple = ()
    help: str = ''

    @property
    def flag(self) -> str:
        return '--' + self.name.replace('_', '-')


def _design_keys(window=(2020, 2024)) -> List[ConfigKey]:
    return [
        ConfigKey('panel', 'path', required=True, help='panel.csv input'),
        ConfigKey('postings', 'path', help='postings.csv used to build absent confounder exposures'),
        ConfigKey('outcome', 'str', 'ln_avg_wage'),
        ConfigKey('treatment', 'str', 'genai_2018', help='pre-determined treatment variable'),
        ConfigKey('treatment_year', 'int', 2018),
        ConfigKey('post_years', 'int_list', [2023, 2024]),
        ConfigKey('window', 'int_list', list(window)),
        ConfigKey('confounders', 'str_list', list(DEFAULT_CONFOUNDERS)),
        ConfigKey('controls', 'str_list', list(DEFAULT_CONTROLS)),
        ConfigKey('cov_type', 'str', 'cluster', choices=('cluster', 'hc1', 'unadjusted')),
        ConfigKey('inference', 'str', 't', choices=('t', 'normal')),
    ]


COMMAND_SCHEMAS: Dict[str, Tuple[ConfigKey, ...]] = {
    'ingest': (
        ConfigKey('postings', 'path', required=True, help='postings.csv input'),
        ConfigKey('neighborhoods', 'path', help='CSV with a neighborhood_id column fixing the entity universe'),
        ConfigKey('controls_file', 'path', help='CSV entity_id,year,<controls> merged into the panel'),
        ConfigKey('window', 'int_list', [2018, 2024]),
        ConfigKey('index_scope', 'str', 'per-year', choices=('per-year', 'pooled')),
        ConfigKey('wage_mode', 'str', 'exclude', choices=('exclude', 'winsorize')),
        ConfigKey('base_year', 'int', 2018, help='year of the pre-determined variables'),
        ConfigKey('confounders', 'bool', True, help='attach concurrent-shock exposures'),
    ),
    'exposure': (
        ConfigKey('assessments', 'path', required=True, help='occupation_scores.csv input'),
        ConfigKey('postings', 'path', required=True),
        ConfigKey('panel', 'path', help='panel.csv to extend with exposure columns'),
        ConfigKey('expert_levels', 'path', help='CSV occupation_code,level of expert labels'),
        ConfigKey('level_weights', 'float_map', dict(DEFAULT_LEVEL_WEIGHTS)),
        ConfigKey('reference_year', 'int', 2018),
    ),
    'did': tuple(_design_keys()),
    'event-study': tuple(_design_keys()) + (
        ConfigKey('base_year', 'int', 2022),
        ConfigKey('wald_form', 'str', 'F', choices=('F', 'chi2')),
    ),
    'permute': tuple(_design_keys()) + (
        ConfigKey('scheme', 'str', 'cross-entity', choices=('cross-entity', 'cross-observation')),
        ConfigKey('B', 'int', 500),
        ConfigKey('add_one', 'bool', False),
        ConfigKey('exhaustive', 'bool', False),
        ConfigKey('moderator', 'str', 'education', choices=('education', 'heat')),
    ),
    'bartik': (
        ConfigKey('panel', 'path'),
        ConfigKey('postings', 'path'),
        ConfigKey('long_differences', 'path', help='ready-made long-difference table'),
        ConfigKey('exposure_variable', 'str', 'genai'),
        ConfigKey('outcome', 'str', 'ln_avg_wage'),
        ConfigKey('base_year', 'int', 2018),
        ConfigKey('pre_years', 'int_list', [2018, 2019]),
        ConfigKey('post_years', 'int_list', [2023, 2024]),
        ConfigKey('changes', 'str_list', ['ln_population', 'nightlight']),
        ConfigKey('levels', 'str_list', list(DEFAULT_CONFOUNDERS)),
        ConfigKey('event_study', 'bool', True),
        ConfigKey('event_window', 'int_list', [2020, 2024]),
        ConfigKey('event_base_year', 'int', 2022),
    ),
    'triple-did': tuple(_design_keys()) + (
        ConfigKey('moderators', 'str_list', ['education_2018', 'heat_2018']),
    ),
    'fe-interact': (
        ConfigKey('panel', 'path', required=True),
        ConfigKey('outcome', 'str', 'ln_avg_wage'),
        ConfigKey('exposure', 'str', 'genai'),
        ConfigKey('education', 'str', 'education'),
        ConfigKey('heat', 'str', 'heat'),
        ConfigKey('standardized_controls', 'str_list', ['ndvi', 'poi_density', 'land_use_ratio']),
        ConfigKey('raw_controls', 'str_list', ['ln_population', 'nightlight']),
        ConfigKey('window', 'int_list', [2018, 2024]),
        ConfigKey('moderators', 'str_list', ['none', 'education', 'heat'], choices=('none', 'education', 'heat')),
        ConfigKey('grid_points', 'int', 41),
        ConfigKey('placebo_B', 'int', 0, help='placebo shuffles per interaction column (0 skips)'),
        ConfigKey('cov_type', 'str', 'cluster', choices=('cluster', 'hc1', 'unadjusted')),
        ConfigKey('inference', 'str', 't', choices=('t', 'normal')),
    ),
    'lisa': (
        ConfigKey('values', 'path', help='CSV unit_id,value'),
        ConfigKey('panel', 'path'),
        ConfigKey('variable', 'str', 'exposure'),
        ConfigKey('year', 'int', 2024),
        ConfigKey('edges', 'path', help='CSV unit_id,neighbor_id'),
        ConfigKey('polygons', 'path', help='CSV unit_id,ring'),
        ConfigKey('lattice', 'int_list', [], help='rows,cols of a regular lattice'),
        ConfigKey('scheme', 'str', 'queen', choices=('queen', 'rook', 'knn')),
        ConfigKey('k', 'int', 6),
        ConfigKey('island_k', 'int', 6, help='nearest neighbors for contiguity islands (0 keeps them isolated)'),
        ConfigKey('permutations', 'int', 999),
        ConfigKey('alpha', 'float', 0.05),
        ConfigKey('fdr', 'bool', False),
    ),
    'simulate': (
        ConfigKey('kind', 'str', 'did', choices=('did', 'interaction', 'iv', 'spatial', 'postings', 'coverage')),
        ConfigKey('n_entities', 'int', 500),
        ConfigKey('true_beta_did', 'float', -0.15),
        ConfigKey('pretrend_slope', 'float', 0.0),
        ConfigKey('triple_beta3', 'float', 0.0),
        ConfigKey('interaction_beta3', 'float', -0.5),
        ConfigKey('interaction_moderator', 'str', 'education', choices=('education', 'heat')),
        ConfigKey('first_stage_pi', 'float', 0.5),
        ConfigKey('true_beta_iv', 'float', -0.3),
        ConfigKey('iv_endogeneity', 'float', 0.6),
        ConfigKey('cluster_rho', 'float', 0.3),
        ConfigKey('noise_sd', 'float', 0.5),
        ConfigKey('lattice', 'int_list', [6, 6]),
        ConfigKey('estimator', 'str', 'did', choices=('did', 'did-hc1', 'event-study', 'triple-did',
                                                      'interaction', 'iv', 'iv-ols')),
        ConfigKey('n_draws', 'int', 200),
        ConfigKey('alpha', 'float', 0.05),
    ),
    'report': (
        ConfigKey('layout', 'str', 'table2', choices=('table2', 'table3', 'eventstudy')),
        ConfigKey('digits', 'int', 3),
    ),
}

COMMANDS = tuple(COMMAND_SCHEMAS)


def default_threads() -> int:
    raw = os.getenv(THREADS_ENV, '').strip()
    if not raw:
        return 1
    try:
        threads = int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer {THREADS_ENV}={raw!r}")
        return 1
    return threads if validate_threads(threads) else 1


def config_hash(values: Mapping[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a merged configuration"""
    canonical = json.dumps(values, sort_keys=True, separators=(',', ':'), ensure_ascii=True)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


@dataclass(frozen=True)
class RunConfig:
    command: str
    values: Mapping[str, Any]
    seed: int
    threads: int
    version: str = __version__
    source: Optional[str] = None
    fingerprint: str = ''

    def __getitem__(self, name: str) -> Any:
        return self.values[name]

    def get(self, name: str, default: Any = None) -> Any:
        return self.values.get(name, default)

    def to_dict(self) -> Dict[str, Any]:
        """Config echo for reports; threads are left out so reports do not depend on them"""
        return {
            'command': self.command,
            'values': {name: self.values[name] for name in sorted(self.values)},
            'seed': self.seed,
            'config_hash': self.fingerprint,
            'tool_version': self.version,
        }


def _cross_checks(command: str, values: Mapping[str, Any]) -> List[str]:
    """Relations between keys that single-key validation cannot see"""
    errors = []
    for name in VARIABLE_KEYS:
        named = values.get(name)
        variables = [named] if isinstance(named, str) else named if isinstance(named, (list, tuple)) else []
        for variable in variables:
            if not validate_variable_name(variable):
                errors.append(f"{name}: invalid variable name {variable!r}")
    for name in ('window', 'event_window'):
        if name in values:
            errors.extend(validate_year_pair(name, values[name]))
    if 'post_years' in values and 'window' in values and command not in ('ingest', 'fe-interact'):
        window, post = values['window'], values['post_years']
        if not post:
            errors.append('post_years: at least one post year required')
        elif len(window) == 2 and not all(window[0] <= year <= window[1] for year in post):
            errors.append(f"post_years: {post} outside window {window}")
    if command == 'event-study':
        window = values.get('window') or []
        if len(window) == 2 and not window[0] <= values['base_year'] <= window[1]:
            errors.append(f"base_year: {values['base_year']} outside window {window}")
    if command == 'permute':
        if values['B'] < 1 and not values['exhaustive']:
            errors.append('B: must be positive')
    if command == 'bartik':
        if not values.get('long_differences') and not (values.get('panel') and values.get('postings')):
            errors.append('bartik: either long_differences or both panel and postings are required')
        if values.get('event_study') and not values.get('panel'):
            errors.append('event_study: needs panel')
        for name in ('pre_years', 'post_years'):
            if not values[name]:
                errors.append(f"{name}: at least one year required")
    if command == 'lisa':
        if not values.get('values') and not values.get('panel'):
            errors.append('lisa: either values or panel is required')
        sources = [name for name in ('edges', 'polygons') if values.get(name)] + (['lattice'] if values.get('lattice') else [])
        if len(sources) != 1:
            errors.append(f"lisa: exactly one of edges, polygons, lattice is required, got {sources or 'none'}")
        if values.get('lattice') and len(values['lattice']) != 2:
            errors.append('lattice: expected rows,cols')
        if not 0 < values['alpha'] < 1:
            errors.append(f"alpha: must be in (0, 1), got {values['alpha']}")
        if values['permutations'] < 1:
            errors.append('permutations: must be positive')
    if command == 'simulate':
        if values['noise_sd'] <= 0:
            errors.append('noise_sd: must be positive')
        if not 0 <= values['cluster_rho'] < 1:
            errors.append('cluster_rho: must be in [0, 1)')
        if len(values['lattice']) != 2 or min(values['lattice']) < 2:
            errors.append('lattice: expected rows,cols of at least 2')
        if values['n_draws'] < 1:
            errors.append('n_draws: must be positive')
    if command == 'fe-interact' and values['grid_points'] < 2:
        errors.append('grid_points: must be at least 2')
    return errors


class RunConfigManager:
    """Manage the YAML run configuration file"""

    def __init__(self, config_path: Optional[str] = None):
        """
        Initialize Run Config Manager

        Args:
            config_path: Path to the YAML run configuration (None: defaults only)
        """
        self.config_path = config_path
        self.backup_dir = None
        if config_path:
            config_dir = os.path.dirname(os.path.abspath(config_path))
            self.backup_dir = os.path.join(config_dir, 'backups')

    def load_config(self) -> Dict[str, Any]:
        """Load the raw configuration; an absent file means built-in defaults"""
        if not self.config_path or not os.path.exists(self.config_path):
            if self.config_path:
                logger.info(f"Config file {self.config_path} not found, using defaults")
            return {}
        with open(self.config_path, 'r', encoding='utf-8') as f:
            try:
                loaded = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ValidationError([f"config: cannot parse {self.config_path}: {e}"])
        if loaded is None:
            return {}
        if not isinstance(loaded, dict):
            raise ValidationError([f"config: top level of {self.config_path} must be a mapping"])
        return loaded

    def save_config(self, config: Dict[str, Any]) -> bool:
        """Save the configuration with a timestamped backup of the previous file"""
        if not self.config_path:
            return False
        try:
            if os.path.exists(self.config_path):
                os.makedirs(self.backup_dir, exist_ok=True)
                backup_path = os.path.join(
                    self.backup_dir,
                    f"{os.path.basename(self.config_path)}.backup.{datetime.now().strftime('%Y%m%d_%H%M%S')}"
                )
                shutil.copy2(self.config_path, backup_path)
            directory = os.path.dirname(os.path.abspath(self.config_path))
            os.makedirs(directory, exist_ok=True)
            with open(self.config_path, 'w', encoding='utf-8') as f:
                yaml.safe_dump(config, f, default_flow_style=False, sort_keys=False, allow_unicode=True)
            return True
        except OSError as e:
            logger.error(f"Error saving config {self.config_path}: {e}")
            return False

    def resolve(self, command: str, overrides: Optional[Mapping[str, Any]] = None,
                seed: Optional[int] = None, threads: Optional[int] = None,
                check_files: bool = True) -> RunConfig:
        """
        Merge defaults < YAML block < per-key overrides < --seed/--threads and validate

        Raises:
            ValidationError: listing every violated field
        """
        if command not in COMMAND_SCHEMAS:
            raise ValidationError([f"command: unknown command {command!r}; expected one of {list(COMMANDS)}"])
        schema = COMMAND_SCHEMAS[command]
        raw = self.load_config()
        errors = [f"{name}: unknown top-level key" for name in sorted(raw)
                  if name not in COMMAND_SCHEMAS and name not in GLOBAL_KEYS]
        block = raw.get(command) or {}
        if not isinstance(block, dict):
            errors.append(f"{command}: configuration block must be a mapping")
            block = {}

        values = {key.name: _copy(key.default) for key in schema}
        values.update(block)
        values.update({name: value for name, value in (overrides or {}).items() if value is not None})

        resolved_seed = seed if seed is not None else raw.get('seed', 0)
        resolved_threads = threads if threads is not None else raw.get('threads', default_threads())
        if not validate_seed(resolved_seed):
            errors.append(f"seed: expected integer in [0, 2^64-1], got {resolved_seed!r}")
        if not validate_threads(resolved_threads):
            errors.append(f"threads: expected integer in [1, 256], got {resolved_threads!r}")

        is_valid, key_errors = validate_command_config(schema, values, check_files)
        errors.extend(key_errors)
        if is_valid:
            errors.extend(_cross_checks(command, values))
        if errors:
            raise ValidationError(errors)

        ordered = {name: values[name] for name in sorted(values)}
        fingerprint = config_hash({'command': command, 'values': ordered, 'seed': resolved_seed})
        return RunConfig(command, ordered, resolved_seed, resolved_threads,
                         source=self.config_path, fingerprint=fingerprint)


def _copy(value: Any) -> Any:
    if isinstance(value, list):
        return list(value)
    if isinstance(value, dict):
        return dict(value)
    return value
