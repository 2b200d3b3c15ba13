import logging
import os
import sqlite3
from contextlib import contextmanager
from pathlib import Path
from typing import Optional, Union

logger = logging.getLogger(__name__)

DATABASE_URL = os.environ.get("FEDRAN_DB", os.path.join("results", "runs.db"))
DATABASE_NAME = "runs.db"

PathLike = Union[str, Path]


def db_path_for(output_dir: PathLike) -> str:
    return str(Path(output_dir) / DATABASE_NAME)


def init_db(db_path: Optional[PathLike] = None):
    """Initialize the run registry tables"""
    db_path = str(db_path or DATABASE_URL)
    conn = None
    try:
        Path(db_path).parent.mkdir(parents=True, exist_ok=True)
        conn = sqlite3.connect(db_path)
        cursor = conn.cursor()

        cursor.execute("PRAGMA foreign_keys = ON")

        # One row per finished (mode, N, seed) run
        cursor.execute('''
            CREATE TABLE IF NOT EXISTS runs (
                run_id INTEGER PRIMARY KEY AUTOINCREMENT,
                mode TEXT NOT NULL,
                transmitters INTEGER NOT NULL,
                seed INTEGER NOT NULL,
                csv_path TEXT NOT NULL,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            )
        ''')

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS round_reports (
                run_id INTEGER NOT NULL,
                round INTEGER NOT NULL,
                step_span TEXT NOT NULL,
                system_throughput_bps REAL NOT NULL,
                cum_reward REAL NOT NULL,
                avg_energy_mj REAL NOT NULL,
                avg_eff_bits_per_mj REAL NOT NULL,
                c1 INTEGER NOT NULL DEFAULT 0,
                c2 INTEGER NOT NULL DEFAULT 0,
                c3 INTEGER NOT NULL DEFAULT 0,
                c4 INTEGER NOT NULL DEFAULT 0,
                gradient_updates INTEGER NOT NULL DEFAULT 0,
                mean_epsilon REAL NOT NULL DEFAULT 0,
                PRIMARY KEY (run_id, round),
                FOREIGN KEY (run_id) REFERENCES runs(run_id) ON DELETE CASCADE
            )
        ''')

        conn.commit()
        logger.info(f"✅ Run registry ready at {db_path}")

    except Exception as e:
        logger.error(f"❌ Run registry initialization error: {e}")
        raise
    finally:
        if conn:
            conn.close()


@contextmanager
def get_db_connection(db_path: Optional[PathLike] = None):
    """Database connection context manager"""
    conn = sqlite3.connect(str(db_path or DATABASE_URL))
    conn.row_factory = sqlite3.Row
    conn.execute("PRAGMA foreign_keys = ON")
    try:
        yield conn
    except Exception as e:
        conn.rollback()
        raise e
    finally:
        conn.close()
