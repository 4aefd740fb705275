"""
SQLite ledger of run manifests
"""
import json
import logging
import sqlite3
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from config import RUN_REGISTRY_DB, TABLE_RUN_OUTPUTS, TABLE_RUNS

logger = logging.getLogger(__name__)


@dataclass
class RunManifest:
    """Provenance of one command invocation"""

    command: str
    config_path: str
    config_hash: str
    artifact_version: str
    wall_clock: float
    outputs: List[str] = field(default_factory=list)
    status: str = 'ok'
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'command': self.command,
            'config_path': self.config_path,
            'config_hash': self.config_hash,
            'artifact_version': self.artifact_version,
            'wall_clock': self.wall_clock,
            'outputs': list(self.outputs),
            'status': self.status,
            'details': dict(self.details),
        }

    def write(self, path: str):
        with open(path, 'w', encoding='utf-8') as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


class RunRegistry:
    """SQLite connection and run bookkeeping"""

    def __init__(self, database: str = RUN_REGISTRY_DB):
        self.database = database
        self.connection = None
        self.initialize_database()

    def get_connection(self):
        """Get database connection"""
        if self.connection is None:
            self.connection = sqlite3.connect(self.database)
            self.connection.row_factory = sqlite3.Row
        return self.connection

    def initialize_database(self):
        """Create the registry tables"""
        conn = self.get_connection()
        try:
            cursor = conn.cursor()

            cursor.execute(f"""
                CREATE TABLE IF NOT EXISTS {TABLE_RUNS} (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    command TEXT NOT NULL,
                    config_path TEXT,
                    config_hash TEXT,
                    artifact_version TEXT NOT NULL,
                    wall_clock REAL NOT NULL,
                    status TEXT NOT NULL,
                    created_at DATETIME DEFAULT CURRENT_TIMESTAMP
                )
            """)

            cursor.execute(f"""
                CREATE TABLE IF NOT EXISTS {TABLE_RUN_OUTPUTS} (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id INTEGER NOT NULL REFERENCES {TABLE_RUNS}(id),
                    path TEXT NOT NULL
                )
            """)

            cursor.execute(f"CREATE INDEX IF NOT EXISTS idx_runs_config_hash ON {TABLE_RUNS}(config_hash)")
            conn.commit()
            logger.debug(f"Run registry ready at {self.database}")

        except sqlite3.Error as e:
            logger.error(f"Failed to initialize run registry: {e}")
            raise

    def record_run(self, manifest: RunManifest) -> Optional[int]:
        """Insert a manifest and its output list; returns the run id"""
        conn = self.get_connection()
        try:
            cursor = conn.cursor()
            cursor.execute(f"""
                INSERT INTO {TABLE_RUNS} (command, config_path, config_hash, artifact_version, wall_clock, status)
                VALUES (?, ?, ?, ?, ?, ?)
            """, (manifest.command, manifest.config_path, manifest.config_hash,
                  manifest.artifact_version, manifest.wall_clock, manifest.status))
            run_id = cursor.lastrowid
            cursor.executemany(
                f"INSERT INTO {TABLE_RUN_OUTPUTS} (run_id, path) VALUES (?, ?)",
                [(run_id, path) for path in manifest.outputs])
            conn.commit()
            logger.info(f"Run {run_id} ({manifest.command}) recorded")
            return run_id
        except sqlite3.Error as e:
            logger.error(f"Failed to record run {manifest.command}: {e}")
            return None

    def get_run(self, run_id: int) -> Optional[Dict[str, Any]]:
        """Get one run with its outputs"""
        conn = self.get_connection()
        try:
            cursor = conn.cursor()
            cursor.execute(f"SELECT * FROM {TABLE_RUNS} WHERE id = ?", (run_id,))
            row = cursor.fetchone()
            if row is None:
                return None
            cursor.execute(f"SELECT path FROM {TABLE_RUN_OUTPUTS} WHERE run_id = ? ORDER BY id", (run_id,))
            run = dict(row)
            run['outputs'] = [r['path'] for r in cursor.fetchall()]
            return run
        except sqlite3.Error as e:
            logger.error(f"Failed to get run {run_id}: {e}")
            return None

    def find_runs(self, config_hash: str) -> List[Dict[str, Any]]:
        """All runs of one configuration, oldest first"""
        conn = self.get_connection()
        try:
            cursor = conn.cursor()
            cursor.execute(f"SELECT * FROM {TABLE_RUNS} WHERE config_hash = ? ORDER BY id", (config_hash,))
            return [dict(row) for row in cursor.fetchall()]
        except sqlite3.Error as e:
            logger.error(f"Failed to look up runs for {config_hash}: {e}")
            return []

    def get_run_stats(self) -> Dict[str, Any]:
        """Counts of runs per status"""
        conn = self.get_connection()
        try:
            cursor = conn.cursor()
            cursor.execute(f"SELECT status, COUNT(*) AS runs FROM {TABLE_RUNS} GROUP BY status")
            by_status = {row['status']: row['runs'] for row in cursor.fetchall()}
            return {'total_runs': sum(by_status.values()), 'by_status': by_status}
        except sqlite3.Error as e:
            logger.error(f"Failed to get run stats: {e}")
            return {'total_runs': 0, 'by_status': {}}

    def close(self):
        """Close database connection"""
        if self.connection:
            self.connection.close()
            self.connection = None
