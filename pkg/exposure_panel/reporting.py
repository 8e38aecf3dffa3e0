#!/usr/bin/env python3
"""
Reporting
Deterministic JSON reports written atomically, plus fixed-width coefficient
tables.
"""

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .exceptions import ExposurePanelError, LayoutError

logger = logging.getLogger(__name__)

# (threshold, stars) pairs checked in order; p < threshold earns the stars
STAR_SCHEMES: Dict[str, Tuple[Tuple[float, str], ...]] = {
    'table2': ((0.05, '**'), (0.1, '*')),
    'table3': ((0.01, '***'), (0.05, '**'), (0.1, '*')),
    'eventstudy': ((0.05, '**'), (0.1, '*')),
}
LAYOUTS = tuple(STAR_SCHEMES)
LAYOUT_KINDS = {
    'table2': ('did', 'triple-did'),
    'table3': ('interaction',),
    'eventstudy': ('eventstudy',),
}
LABEL_WIDTH = 28
CELL_WIDTH = 16


def json_safe(value: Any) -> Any:
    """Convert numpy types and non-finite floats into JSON-representable values"""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return [json_safe(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return value
    return value


def dumps(document: Any) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline"""
    return json.dumps(json_safe(document), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + '\n'


def atomic_write_text(path: str, text: str) -> str:
    """Write text via a temporary file in the target directory and an atomic rename"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix='.tmp-', dir=directory)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
    return path


def write_json(document: Any, path: str) -> str:
    return atomic_write_text(path, dumps(document))


def write_csv(frame: pd.DataFrame, path: str) -> str:
    """Plot-ready side table; absent values are empty cells"""
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator='\n', na_rep=''))


def load_json(path: str) -> Dict:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


@dataclass
class AnalysisReport:
    """One self-describing result document per run"""

    command: str
    config: Mapping[str, Any]
    results: Dict[str, Any] = field(default_factory=dict)
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    audit: Dict[str, int] = field(default_factory=dict)
    tables: Dict[str, str] = field(default_factory=dict)
    side_tables: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'status': 'ok',
            'command': self.command,
            'config': dict(self.config),
            'results': self.results,
            'diagnostics': self.diagnostics,
            'audit': dict(sorted(self.audit.items())),
            'tables': self.tables,
            'side_tables': sorted(self.side_tables),
        }

    def write(self, path: str) -> str:
        write_json(self.to_dict(), path)
        logger.info(f"Report written: {path}")
        return path


def write_error_record(error: Exception, path: Optional[str]) -> Dict[str, Any]:
    """Machine-readable error record, also written to path when given"""
    if isinstance(error, ExposurePanelError):
        record = error.to_record()
    else:
        record = {'status': 'error', 'error_type': type(error).__name__, 'message': str(error), 'details': {}}
    if path:
        try:
            write_json(record, path)
        except OSError as e:
            logger.error(f"Could not write error record {path}: {e}")
    return json_safe(record)


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def stars(p_value: Optional[float], layout: str = 'table2') -> str:
    if layout not in STAR_SCHEMES:
        raise LayoutError(f"Unknown layout {layout!r}; expected one of {list(LAYOUTS)}")
    if p_value is None or not math.isfinite(p_value):
        return ''
    for threshold, marker in STAR_SCHEMES[layout]:
        if p_value < threshold:
            return marker
    return ''


def format_cell(coef: Optional[float], std_err: Optional[float], p_value: Optional[float],
                layout: str = 'table2', digits: int = 3) -> Tuple[str, str]:
    """('-0.151**', '(0.068)') for one coefficient"""
    if coef is None:
        return '', ''
    top = f"{coef:.{digits}f}{stars(p_value, layout)}"
    bottom = '' if std_err is None else f"({std_err:.{digits}f})"
    return top, bottom


@dataclass(frozen=True)
class TableRow:
    term: str
    coef: Optional[float]
    std_err: Optional[float]
    p_value: Optional[float]


@dataclass(frozen=True)
class TableColumn:
    label: str
    kind: str
    rows: Tuple[TableRow, ...]
    footer: Tuple[Tuple[str, str], ...] = ()


def column_from_fit_dict(fit: Mapping[str, Any], label: str, kind: str,
                         terms: Optional[Sequence[str]] = None,
                         footer: Sequence[Tuple[str, str]] = ()) -> TableColumn:
    """Column built from FitResult.to_dict() output so printed values match the report"""
    coefficients = fit['coefficients']
    names = list(terms) if terms is not None else list(coefficients)
    rows = []
    for name in names:
        entry = coefficients.get(name)
        if entry is None:
            rows.append(TableRow(name, None, None, None))
        else:
            rows.append(TableRow(name, entry['coef'], entry['std_err'], entry['p_value']))
    return TableColumn(label, kind, tuple(rows), tuple(footer))


def column_from_fit(fit, label: str, kind: str, terms: Optional[Sequence[str]] = None,
                    footer: Sequence[Tuple[str, str]] = ()) -> TableColumn:
    return column_from_fit_dict(fit.to_dict(include_cov=False), label, kind, terms, footer)


def event_study_column(points: Sequence[Mapping[str, Any]], label: str = 'Event study') -> TableColumn:
    rows = []
    for point in points:
        if point.get('is_base'):
            rows.append(TableRow(str(point['year']), None, None, None))
        else:
            rows.append(TableRow(str(point['year']), point['coef'], point['std_err'], point['p_value']))
    return TableColumn(label, 'eventstudy', tuple(rows))


def render_table(columns: Sequence[TableColumn], layout: str = 'table2', digits: int = 3,
                 title: Optional[str] = None, labels: Optional[Mapping[str, str]] = None) -> str:
    """
    Fixed-width text table: coefficients with stars over parenthesized SEs

    Raises:
        LayoutError: unknown layout, no columns, or a column whose kind the layout does not take
    """
    if layout not in STAR_SCHEMES:
        raise LayoutError(f"Unknown layout {layout!r}; expected one of {list(LAYOUTS)}")
    if not columns:
        raise LayoutError(f"Layout {layout} needs at least one fit")
    wrong = [column.label for column in columns if column.kind not in LAYOUT_KINDS[layout]]
    if wrong:
        raise LayoutError(f"Layout {layout} cannot show {wrong}; it takes {list(LAYOUT_KINDS[layout])} results",
                          {'layout': layout, 'columns': wrong})
    labels = labels or {}
    terms: List[str] = []
    for column in columns:
        for row in column.rows:
            if row.term not in terms:
                terms.append(row.term)
    footer_names: List[str] = []
    for column in columns:
        for name, _ in column.footer:
            if name not in footer_names:
                footer_names.append(name)

    width = LABEL_WIDTH + CELL_WIDTH * len(columns)
    lines = []
    if title:
        lines.append(title)
    lines.append('=' * width)
    header = ''.ljust(LABEL_WIDTH) + ''.join(
        f"({i}) {column.label}"[:CELL_WIDTH - 1].rjust(CELL_WIDTH) for i, column in enumerate(columns, 1))
    lines.append(header)
    lines.append('-' * width)
    for term in terms:
        cells = []
        for column in columns:
            row = next((r for r in column.rows if r.term == term), None)
            if row is None:
                cells.append(('', ''))
            elif row.coef is None and layout == 'eventstudy':
                cells.append(('0 (base)', ''))
            else:
                cells.append(format_cell(row.coef, row.std_err, row.p_value, layout, digits))
        label = labels.get(term, term)[:LABEL_WIDTH - 1]
        lines.append(label.ljust(LABEL_WIDTH) + ''.join(top.rjust(CELL_WIDTH) for top, _ in cells))
        if any(bottom for _, bottom in cells):
            lines.append(''.ljust(LABEL_WIDTH) + ''.join(bottom.rjust(CELL_WIDTH) for _, bottom in cells))
    if footer_names:
        lines.append('-' * width)
        for name in footer_names:
            values = [dict(column.footer).get(name, '') for column in columns]
            lines.append(name[:LABEL_WIDTH - 1].ljust(LABEL_WIDTH) + ''.join(v.rjust(CELL_WIDTH) for v in values))
    lines.append('=' * width)
    notes = ', '.join(f"{marker} p<{threshold:g}" for threshold, marker in STAR_SCHEMES[layout])
    lines.append(f"Standard errors in parentheses; {notes}")
    return '\n'.join(lines) + '\n'


def format_number(value: Optional[float], digits: int = 3) -> str:
    if value is None:
        return ''
    if isinstance(value, str):
        return value
    if isinstance(value, int) and not isinstance(value, bool):
        return f"{value:,}"
    return f"{value:.{digits}f}"
