from typing import List, Optional, Sequence

from database import PathLike, get_db_connection
from models import RoundReport, RunMode
from schemas import SimulationException

REPORT_FIELDS = [
    "round", "step_span", "system_throughput_bps", "cum_reward", "avg_energy_mj", "avg_eff_bits_per_mj",
    "c1", "c2", "c3", "c4", "gradient_updates", "mean_epsilon",
]


class RunCRUD:
    @staticmethod
    def record_run(mode: RunMode, transmitters: int, seed: int, csv_path: str,
                   reports: Sequence[RoundReport], db_path: Optional[PathLike] = None) -> dict:
        """Store a finished run together with its round reports"""
        with get_db_connection(db_path) as conn:
            cursor = conn.cursor()
            cursor.execute(
                "INSERT INTO runs (mode, transmitters, seed, csv_path) VALUES (?, ?, ?, ?)",
                (RunMode(mode).value, transmitters, seed, csv_path)
            )
            run_id = cursor.lastrowid

            placeholders = ", ".join("?" for _ in REPORT_FIELDS)
            cursor.executemany(
                f"INSERT INTO round_reports (run_id, {', '.join(REPORT_FIELDS)}) VALUES (?, {placeholders})",
                [(run_id, *(getattr(r, f) for f in REPORT_FIELDS)) for r in reports]
            )
            conn.commit()

            cursor.execute("SELECT * FROM runs WHERE run_id = ?", (run_id,))
            return dict(cursor.fetchone())

    @staticmethod
    def get_run(run_id: int, db_path: Optional[PathLike] = None) -> dict:
        """Get run by id"""
        with get_db_connection(db_path) as conn:
            cursor = conn.cursor()
            cursor.execute("SELECT * FROM runs WHERE run_id = ?", (run_id,))
            result = cursor.fetchone()
            if not result:
                raise SimulationException("Run not found", 404)
            return dict(result)

    @staticmethod
    def get_all_runs(mode: Optional[RunMode] = None, db_path: Optional[PathLike] = None) -> List[dict]:
        """Get all runs, optionally for one mode"""
        with get_db_connection(db_path) as conn:
            cursor = conn.cursor()
            if mode is None:
                cursor.execute("SELECT * FROM runs ORDER BY run_id")
            else:
                cursor.execute("SELECT * FROM runs WHERE mode = ? ORDER BY run_id", (RunMode(mode).value,))
            return [dict(row) for row in cursor.fetchall()]


class RoundReportCRUD:
    @staticmethod
    def get_reports(run_id: int, db_path: Optional[PathLike] = None) -> List[RoundReport]:
        """Round reports of one run, in round order"""
        RunCRUD.get_run(run_id, db_path)
        with get_db_connection(db_path) as conn:
            cursor = conn.cursor()
            cursor.execute(
                f"SELECT {', '.join(REPORT_FIELDS)} FROM round_reports WHERE run_id = ? ORDER BY round",
                (run_id,)
            )
            return [RoundReport(**dict(row)) for row in cursor.fetchall()]
