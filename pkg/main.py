import logging
import os
from contextlib import asynccontextmanager
from typing import List, Optional

import uvicorn
from fastapi import FastAPI, Query
from fastapi.responses import JSONResponse

from crud import RoundReportCRUD, RunCRUD
from database import db_path_for, init_db
from harness import compare, load_summary, parse_config, run_experiment, with_experiment_overrides
from models import ComparisonTable, RunMode, Summary
from schemas import ExperimentRequest, RunRecord, RunWithReports, SimulationException

# Configure logging
logging.basicConfig(level=getattr(logging, os.environ.get("FEDRAN_LOG_LEVEL", "INFO").upper(), logging.INFO))
logger = logging.getLogger(__name__)


def output_dir() -> str:
    return os.environ.get("FEDRAN_OUTPUT_DIR", "results")


# Lifespan events
@asynccontextmanager
async def lifespan(app: FastAPI):
    # Startup
    logger.info("Initializing run registry...")
    init_db(db_path_for(output_dir()))
    logger.info("Application started successfully!")
    yield
    # Shutdown
    logger.info("Application shutting down...")


app = FastAPI(
    title="FedRAN Simulator API",
    version="1.0.0",
    lifespan=lifespan
)


# Exception handler
@app.exception_handler(SimulationException)
async def simulation_exception_handler(request, exc: SimulationException):
    logger.error(f"SimulationException: {exc.message}")
    return JSONResponse(status_code=exc.status_code, content={"detail": exc.message})


@app.get("/", summary="Health check")
async def root():
    return {"status": "ok", "output_dir": output_dir()}


@app.post("/experiments", response_model=Summary, summary="Run an experiment from INI config text")
def create_experiment(request: ExperimentRequest):
    cfg = with_experiment_overrides(
        parse_config(request.config_text),
        modes=request.modes,
        seeds=request.seeds,
    )
    out = request.output_dir or output_dir()
    return run_experiment(cfg, output_dir=out)


@app.get("/runs", response_model=List[RunRecord], summary="List recorded runs")
def list_runs(mode: Optional[RunMode] = None):
    return RunCRUD.get_all_runs(mode, db_path_for(output_dir()))


@app.get("/runs/{run_id}/rounds", response_model=RunWithReports, summary="Round reports of one run")
def get_run_rounds(run_id: int):
    db_path = db_path_for(output_dir())
    run = RunCRUD.get_run(run_id, db_path)
    return RunWithReports(**run, reports=RoundReportCRUD.get_reports(run_id, db_path))


@app.get("/compare", response_model=ComparisonTable, summary="FedDRL deltas over IDRL and RA")
def get_comparison(in_dir: Optional[str] = None, final_k: Optional[int] = Query(default=None, ge=1)):
    return compare(load_summary(in_dir or output_dir(), final_k))


if __name__ == "__main__":
    uvicorn.run(app, host="0.0.0.0", port=8000)
