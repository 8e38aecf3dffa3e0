#!/usr/bin/env python3
"""
SQLite run ledger recording every CLI run for provenance
"""

import json
import logging
import os
import sqlite3
import uuid
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)

MAX_CONFIG_JSON = 1024 * 1024
RUN_STATUSES = ('RUNNING', 'SUCCESS', 'FAILED')


class RunLedger:
    """File-based SQLite database of analysis runs"""

    def __init__(self, db_path: str):
        """
        Initialize ledger connection

        Args:
            db_path: Path to the SQLite file (usually <out>/runs.db)
        """
        self.db_path = os.path.abspath(db_path)
        os.makedirs(os.path.dirname(self.db_path), exist_ok=True)
        self._init_database()

    def _init_database(self):
        conn = self._get_connection()
        cursor = conn.cursor()
        cursor.execute('''
            CREATE TABLE IF NOT EXISTS runs (
                run_id TEXT PRIMARY KEY,
                command TEXT NOT NULL,
                config_hash TEXT NOT NULL,
                config TEXT,  -- JSON string
                status TEXT NOT NULL DEFAULT 'RUNNING',
                report_path TEXT,
                error TEXT,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                updated_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            )
        ''')
        cursor.execute('CREATE INDEX IF NOT EXISTS idx_runs_command ON runs(command)')
        conn.commit()
        conn.close()

    def _get_connection(self):
        return sqlite3.connect(self.db_path)

    def start_run(self, command: str, config_hash: str, config: Optional[Dict] = None) -> str:
        """
        Record a new run in RUNNING state

        Returns:
            The generated run id
        """
        run_id = uuid.uuid4().hex
        conn = self._get_connection()
        conn.execute(
            'INSERT INTO runs (run_id, command, config_hash, config, status) VALUES (?, ?, ?, ?, ?)',
            (run_id, command, config_hash, json.dumps(config or {}, sort_keys=True), 'RUNNING'),
        )
        conn.commit()
        conn.close()
        logger.info(f"Run {run_id} started: {command} (config {config_hash[:12]})")
        return run_id

    def finish_run(self, run_id: str, status: str, report_path: Optional[str] = None,
                   error: Optional[str] = None) -> bool:
        if status not in RUN_STATUSES:
            raise ValueError(f"Unknown run status {status!r}")
        conn = self._get_connection()
        cursor = conn.cursor()
        cursor.execute(
            'UPDATE runs SET status = ?, report_path = ?, error = ?, updated_at = CURRENT_TIMESTAMP '
            'WHERE run_id = ?',
            (status, report_path, error, run_id),
        )
        updated = cursor.rowcount > 0
        conn.commit()
        conn.close()
        if not updated:
            logger.warning(f"Run not found in ledger: {run_id}")
        return updated

    def _row_to_dict(self, row) -> Dict:
        config_json = row[3]
        if config_json and len(config_json) > MAX_CONFIG_JSON:
            logger.warning(f"Config JSON too large for run {row[0]}: {len(config_json)} bytes")
            config = {}
        else:
            try:
                config = json.loads(config_json) if config_json else {}
            except (json.JSONDecodeError, TypeError) as e:
                logger.warning(f"Invalid config JSON for run {row[0]}: {e}")
                config = {}
        return {
            'run_id': row[0],
            'command': row[1],
            'config_hash': row[2],
            'config': config,
            'status': row[4],
            'report_path': row[5],
            'error': row[6],
            'created_at': row[7],
            'updated_at': row[8],
        }

    def get_run(self, run_id: str) -> Optional[Dict]:
        conn = self._get_connection()
        row = conn.execute(
            'SELECT run_id, command, config_hash, config, status, report_path, error, created_at, updated_at '
            'FROM runs WHERE run_id = ?', (run_id,),
        ).fetchone()
        conn.close()
        return self._row_to_dict(row) if row else None

    def list_runs(self, command: Optional[str] = None) -> List[Dict]:
        """Runs in insertion order, optionally for one command"""
        conn = self._get_connection()
        query = ('SELECT run_id, command, config_hash, config, status, report_path, error, created_at, updated_at '
                 'FROM runs')
        params = ()
        if command is not None:
            query += ' WHERE command = ?'
            params = (command,)
        rows = conn.execute(query + ' ORDER BY rowid', params).fetchall()
        conn.close()
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(f"Retrieved {len(rows)} runs from ledger")
        return [self._row_to_dict(row) for row in rows]
