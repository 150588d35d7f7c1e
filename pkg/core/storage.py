"""
Run manifest: one sqlite file per output directory recording the config hash of
each command and every completed task, so interrupted runs can resume.
"""
import json
import logging
import os
import sqlite3
from typing import Dict, Iterable, Optional, Tuple

from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from core import __version__
from core.errors import ResumeMismatchError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.db"

_db_retry = retry(
    stop=stop_after_attempt(5),
    wait=wait_exponential(multiplier=0.1, min=0.1, max=2),
    retry=retry_if_exception_type(sqlite3.OperationalError),
    reraise=True,
)


def manifest_path(out_dir: str) -> str:
    return os.path.join(out_dir, MANIFEST_NAME)


@_db_retry
def init_db(db_path: str):
    conn = sqlite3.connect(db_path)
    cur = conn.cursor()

    cur.execute("""
    CREATE TABLE IF NOT EXISTS runs (
        command TEXT PRIMARY KEY,
        config_hash TEXT NOT NULL,
        tool_version TEXT,
        started_at TEXT DEFAULT CURRENT_TIMESTAMP,
        updated_at TEXT DEFAULT CURRENT_TIMESTAMP
    )
    """)

    cur.execute("""
    CREATE TABLE IF NOT EXISTS tasks (
        command TEXT NOT NULL,
        task_key TEXT NOT NULL,
        payload TEXT NOT NULL,
        completed_at TEXT DEFAULT CURRENT_TIMESTAMP,
        PRIMARY KEY (command, task_key)
    )
    """)

    conn.commit()
    conn.close()


@_db_retry
def load_run(db_path: str, command: str) -> Optional[tuple]:
    conn = sqlite3.connect(db_path)
    cur = conn.cursor()
    cur.execute("SELECT config_hash, tool_version, started_at FROM runs WHERE command = ?", (command,))
    row = cur.fetchone()
    conn.close()
    return row


@_db_retry
def clear_tasks(db_path: str, command: str):
    conn = sqlite3.connect(db_path)
    cur = conn.cursor()
    cur.execute("DELETE FROM tasks WHERE command = ?", (command,))
    conn.commit()
    conn.close()


@_db_retry
def save_run(db_path: str, command: str, config_hash: str):
    conn = sqlite3.connect(db_path)
    cur = conn.cursor()
    cur.execute("""
        INSERT INTO runs (command, config_hash, tool_version) VALUES (?, ?, ?)
        ON CONFLICT(command) DO UPDATE SET
            config_hash = excluded.config_hash,
            tool_version = excluded.tool_version,
            updated_at = CURRENT_TIMESTAMP
    """, (command, config_hash, __version__))
    conn.commit()
    conn.close()


def start_run(db_path: str, command: str, config_hash: str, resume: bool) -> int:
    """
    Registers `command` under `config_hash`. With resume, a stored run must carry
    the same hash; without it, earlier tasks are discarded. Returns the number
    of completed tasks that will be reused.
    """
    init_db(db_path)
    previous = load_run(db_path, command)
    if resume and previous is not None and previous[0] != config_hash:
        raise ResumeMismatchError(
            f"Cannot resume '{command}': manifest has config hash {previous[0][:12]}, "
            f"current config hashes to {config_hash[:12]}"
        )
    if not resume:
        clear_tasks(db_path, command)
    save_run(db_path, command, config_hash)
    reused = len(load_completed(db_path, command)) if resume else 0
    if reused:
        logger.info("Resuming '%s' with %d completed tasks", command, reused)
    return reused


@_db_retry
def save_task_results(db_path: str, command: str, results: Iterable[Tuple[str, object]]):
    """Insert (task_key, payload) pairs in one transaction."""
    rows = [(command, key, json.dumps(payload)) for key, payload in results]
    if not rows:
        return
    conn = sqlite3.connect(db_path)
    cur = conn.cursor()
    cur.executemany("""
        INSERT OR REPLACE INTO tasks (command, task_key, payload, completed_at)
        VALUES (?, ?, ?, CURRENT_TIMESTAMP)
    """, rows)
    conn.commit()
    conn.close()


@_db_retry
def load_completed(db_path: str, command: str) -> Dict[str, object]:
    conn = sqlite3.connect(db_path)
    cur = conn.cursor()
    cur.execute("SELECT task_key, payload FROM tasks WHERE command = ?", (command,))
    rows = cur.fetchall()
    conn.close()
    return {key: json.loads(payload) for key, payload in rows}
