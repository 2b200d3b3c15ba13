from typing import List, Optional

from pydantic import BaseModel

from models import RoundReport, RunMode


class SimulationException(Exception):
    """Base exception for simulator operations"""
    def __init__(self, message: str, status_code: int = 400):
        self.message = message
        self.status_code = status_code
        super().__init__(self.message)


class ConfigError(SimulationException):
    pass


class TopologyError(SimulationException):
    pass


class ActionError(SimulationException):
    pass


class ShapeMismatchError(SimulationException):
    pass


class McsTableError(SimulationException):
    pass


class ReplayError(SimulationException):
    pass


class CheckpointError(SimulationException):
    pass


class ExperimentError(SimulationException):
    def __init__(self, message: str, status_code: int = 500):
        super().__init__(message, status_code)


# API schemas
class ExperimentRequest(BaseModel):
    config_text: str = ""
    modes: Optional[List[RunMode]] = None
    seeds: Optional[List[int]] = None
    output_dir: Optional[str] = None


class RunRecord(BaseModel):
    run_id: int
    mode: RunMode
    transmitters: int
    seed: int
    csv_path: str
    created_at: str


class RunWithReports(RunRecord):
    reports: List[RoundReport] = []
