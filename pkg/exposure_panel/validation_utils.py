#!/usr/bin/env python3
"""
Validation Utilities Module
Input validation and coercion for run configuration values and CLI overrides
"""

import math
import os
import re
from typing import Any, Dict, List, Optional, Sequence, Tuple

MAX_SEED = 2 ** 64 - 1
MAX_THREADS = 256

VALUE_KINDS = ('str', 'int', 'float', 'bool', 'path', 'int_list', 'str_list', 'float_map')

_TRUE = ('true', '1', 'yes', 'on')
_FALSE = ('false', '0', 'no', 'off')


def validate_seed(seed: Any) -> bool:
    """
    Validate a random seed

    Args:
        seed: Candidate seed

    Returns:
        True if seed is an integer in [0, 2**64 - 1]
    """
    return isinstance(seed, int) and not isinstance(seed, bool) and 0 <= seed <= MAX_SEED


def validate_threads(threads: Any) -> bool:
    return isinstance(threads, int) and not isinstance(threads, bool) and 1 <= threads <= MAX_THREADS


def validate_variable_name(name: Any) -> bool:
    """Panel variable names: letters, digits and underscores, not starting with a digit"""
    if not isinstance(name, str) or not name or len(name) > 100:
        return False
    return re.match(r'^[A-Za-z_][A-Za-z0-9_]*$', name) is not None


def sanitize_path(path: str, base_dir: Optional[str] = None) -> Optional[str]:
    """
    Sanitize an input or output path

    Null bytes and surrounding whitespace are removed. With base_dir the
    resolved path must stay inside it.

    Args:
        path: Path to sanitize
        base_dir: Optional directory the path must resolve into

    Returns:
        Absolute path or None if invalid
    """
    if not path or not isinstance(path, str):
        return None
    path = path.replace('\x00', '').strip()
    if not path:
        return None
    if base_dir is None:
        return os.path.abspath(os.path.expanduser(path))

    abs_base = os.path.abspath(base_dir)
    abs_path = os.path.abspath(os.path.join(abs_base, path))
    try:
        if os.path.commonpath([abs_base, abs_path]) != abs_base:
            return None
    except ValueError:
        return None
    return abs_path


def parse_cli_value(kind: str, raw: str) -> Any:
    """
    Parse a command-line override string into a typed value

    Lists are comma-separated; float maps are 'K=v,K=v'.

    Raises:
        ValueError: raw does not parse as kind
    """
    raw = raw.strip()
    if kind in ('str', 'path'):
        return raw
    if kind == 'int':
        return int(raw)
    if kind == 'float':
        return float(raw)
    if kind == 'bool':
        lowered = raw.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    items = [item.strip() for item in raw.split(',') if item.strip()]
    if kind == 'int_list':
        return [int(item) for item in items]
    if kind == 'str_list':
        return items
    if kind == 'float_map':
        out = {}
        for item in items:
            key, sep, value = item.partition('=')
            if not sep:
                raise ValueError(f"expected KEY=value, got {item!r}")
            out[key.strip()] = float(value)
        return out
    raise ValueError(f"unknown value kind {kind!r}")


def _type_error(name: str, kind: str, value: Any) -> Optional[str]:
    if kind in ('str', 'path'):
        ok = isinstance(value, str)
    elif kind == 'int':
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind == 'float':
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    elif kind == 'bool':
        ok = isinstance(value, bool)
    elif kind == 'int_list':
        ok = isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    elif kind == 'str_list':
        ok = isinstance(value, list) and all(isinstance(v, str) for v in value)
    elif kind == 'float_map':
        ok = isinstance(value, dict) and all(
            isinstance(k, str) and isinstance(v, (int, float)) and not isinstance(v, bool)
            for k, v in value.items()
        )
    else:
        return f"{name}: unknown value kind {kind!r}"
    return None if ok else f"{name}: expected {kind}, got {type(value).__name__} {value!r}"


def validate_value(key: Any, value: Any, check_files: bool = True) -> List[str]:
    """
    Validate one configuration value against its key declaration

    Args:
        key: Object with name, kind, choices and required attributes
        value: Value to check
        check_files: Require 'path' values to name readable files

    Returns:
        List of error messages (empty when valid)
    """
    if value is None:
        return [f"{key.name}: required field missing"] if key.required else []
    error = _type_error(key.name, key.kind, value)
    if error:
        return [error]
    errors = []
    if key.choices:
        candidates = value if isinstance(value, list) else [value]
        bad = [v for v in candidates if v not in key.choices]
        if bad:
            errors.append(f"{key.name}: {bad} not in {list(key.choices)}")
    if key.kind == 'path' and check_files:
        resolved = sanitize_path(value)
        if resolved is None:
            errors.append(f"{key.name}: invalid path {value!r}")
        elif not os.path.isfile(resolved) or not os.access(resolved, os.R_OK):
            errors.append(f"{key.name}: file not readable: {value}")
    return errors


def validate_year_pair(name: str, value: Optional[Sequence[int]]) -> List[str]:
    if value is None:
        return []
    if len(value) != 2 or value[0] > value[1]:
        return [f"{name}: expected [first, last] with first <= last, got {list(value)}"]
    return []


def validate_command_config(schema: Sequence[Any], config: Dict[str, Any],
                            check_files: bool = True) -> Tuple[bool, List[str]]:
    """
    Validate a command configuration block in one pass

    Args:
        schema: Key declarations for the command
        config: Merged configuration values
        check_files: Check that path values name readable files

    Returns:
        Tuple of (is_valid, errors); errors lists every violation found
    """
    known = {key.name: key for key in schema}
    errors = [f"{name}: unknown configuration key" for name in sorted(set(config) - set(known))]
    for key in schema:
        errors.extend(validate_value(key, config.get(key.name), check_files))
    return not errors, errors
