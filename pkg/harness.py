"""Config text, experiment orchestration, final-K summaries and FedDRL-vs-baseline comparison."""
import configparser
import io
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
from pydantic import ValidationError

from crud import RunCRUD
from database import db_path_for, init_db
from env import SignalingTrace, random_joint_actions
from federate import TrainingSystem, run_training
from models import (
    CSV_COLUMNS,
    SUMMARY_METRICS,
    ComparisonRow,
    ComparisonTable,
    ExperimentConfig,
    RoundReport,
    RunConfig,
    RunMode,
    Summary,
    SummaryRow,
)
from schemas import ConfigError, ExperimentError

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"
RUN_FILE_PATTERN = re.compile(r"^(feddrl|idrl|ra)_n(\d+)_seed(-?\d+)\.csv$")

RunKey = Tuple[RunMode, int, int]


# Configuration text
def parse_config(text: str) -> RunConfig:
    """INI sections map onto RunConfig sections; absent keys take their defaults."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text or "")
    except configparser.Error as e:
        raise ConfigError(f"Config syntax error: {e}")

    data = {section: dict(parser.items(section)) for section in parser.sections()}
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        problems = []
        for err in e.errors():
            key = ".".join(str(part) for part in err["loc"]) or "config"
            problems.append(f"{key}: {err['msg']}")
        raise ConfigError("Invalid config: " + "; ".join(problems))


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def emit_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for section in RunConfig.model_fields:
        model = getattr(cfg, section)
        parser[section] = {key: _format_value(getattr(model, key)) for key in type(model).model_fields}
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def load_config(path: Union[str, Path]) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}", 404)
    return parse_config(text)


def with_experiment_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Replace [experiment] keys given on the command line or in an API request."""
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if not overrides:
        return cfg
    try:
        experiment = ExperimentConfig.model_validate({**cfg.experiment.model_dump(), **overrides})
    except ValidationError as e:
        err = e.errors()[0]
        key = ".".join(str(part) for part in err["loc"])
        raise ConfigError(f"Invalid experiment.{key}: {err['msg']}")
    return cfg.model_copy(update={"experiment": experiment})


# Running
def run_file_name(mode: RunMode, transmitters: int, seed: int) -> str:
    return f"{RunMode(mode).value}_n{transmitters}_seed{seed}.csv"


def reports_frame(reports: Sequence[RoundReport]) -> pd.DataFrame:
    return pd.DataFrame([r.model_dump() for r in reports], columns=list(RoundReport.model_fields))


def write_reports_csv(path: Path, reports: Sequence[RoundReport]) -> None:
    try:
        reports_frame(reports)[CSV_COLUMNS].to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise ExperimentError(f"Cannot write {path}: {e}")


def _run_one(cfg: RunConfig, mode: RunMode, seed: int, out_dir: Path) -> Tuple[RunKey, str, List[RoundReport]]:
    n = cfg.topology.total_transmitters
    trace = SignalingTrace() if cfg.experiment.trace else None
    reports = run_training(cfg, mode, seed, trace=trace)

    csv_path = out_dir / run_file_name(mode, n, seed)
    write_reports_csv(csv_path, reports)
    if trace is not None:
        trace_path = csv_path.with_suffix(".trace.ndjson")
        try:
            with open(trace_path, "w", newline="\n") as stream:
                trace.write_ndjson(stream)
        except OSError as e:
            raise ExperimentError(f"Cannot write {trace_path}: {e}")
    return (RunMode(mode), n, seed), str(csv_path), reports


def run_experiment(cfg: RunConfig, workers: int = 1, output_dir: Optional[Union[str, Path]] = None,
                   record: bool = True) -> Summary:
    """Every mode x transmitter count x seed; one CSV per run, summary.json and the sqlite registry."""
    exp = cfg.experiment
    out_dir = Path(output_dir or exp.output_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ExperimentError(f"Cannot create output directory {out_dir}: {e}")

    jobs = [
        (cfg.with_transmitters(n), RunMode(mode), seed)
        for n in cfg.transmitter_grid()
        for mode in exp.modes
        for seed in exp.seeds
    ]
    logger.info(f"Running {len(jobs)} runs into {out_dir} with {workers} worker(s)")

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_one, job_cfg, mode, seed, out_dir) for job_cfg, mode, seed in jobs]
            results = [f.result() for f in futures]
    else:
        results = [_run_one(job_cfg, mode, seed, out_dir) for job_cfg, mode, seed in jobs]

    if record:
        db_path = db_path_for(out_dir)
        init_db(db_path)
        for (mode, n, seed), csv_path, reports in results:
            RunCRUD.record_run(mode, n, seed, csv_path, reports, db_path)

    frames = {key: reports_frame(reports) for key, _, reports in results}
    summary = summarize(frames, exp.final_k)
    summary_path = out_dir / SUMMARY_FILE
    try:
        summary_path.write_text(summary.model_dump_json(indent=2))
    except OSError as e:
        raise ExperimentError(f"Cannot write {summary_path}: {e}")
    logger.info(f"✅ Experiment finished: {len(results)} runs, summary at {summary_path}")
    return summary


def run_trace(cfg: RunConfig, steps: int, seed: int = 1) -> SignalingTrace:
    """Drive the environment with uniformly random joint actions and collect the signaling records."""
    if steps < 1:
        raise ConfigError("Trace needs at least one step")
    trace = SignalingTrace()
    system = TrainingSystem(cfg, seed, trace)
    env = system.env
    for _ in range(steps):
        env.step(random_joint_actions(system.policy_rng, env.num_agents, env.num_actions))
    logger.info(f"Traced {steps} steps: {len(trace)} records")
    return trace


# Results
def load_results(in_dir: Union[str, Path]) -> Dict[RunKey, pd.DataFrame]:
    in_dir = Path(in_dir)
    if not in_dir.is_dir():
        raise ExperimentError(f"Results directory not found: {in_dir}", 404)
    frames = {}
    for path in sorted(in_dir.glob("*.csv")):
        match = RUN_FILE_PATTERN.match(path.name)
        if not match:
            continue
        try:
            frame = pd.read_csv(path)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise ExperimentError(f"Cannot read {path}: {e}")
        missing = [c for c in CSV_COLUMNS if c not in frame.columns]
        if missing:
            raise ExperimentError(f"{path} lacks columns {missing}")
        frames[(RunMode(match.group(1)), int(match.group(2)), int(match.group(3)))] = frame
    if not frames:
        raise ExperimentError(f"No run CSVs in {in_dir}", 404)
    return frames


def normalize(values: Dict[str, float]) -> Dict[str, float]:
    """Divide by the max across modes; min-max rescale when any value is not positive."""
    if not values:
        return {}
    top, bottom = max(values.values()), min(values.values())
    if bottom > 0:
        return {k: v / top for k, v in values.items()}
    if top == bottom:
        return {k: 1.0 for k in values}
    return {k: (v - bottom) / (top - bottom) for k, v in values.items()}


def summarize(frames: Dict[RunKey, pd.DataFrame], final_k: int = 10) -> Summary:
    """Mean and sample std across seeds of each run's final-K-round means."""
    if not frames:
        raise ExperimentError("Nothing to summarize")
    per_run = []
    for (mode, n, seed), frame in frames.items():
        tail = frame.sort_values("round").tail(final_k)
        per_run.append({"mode": RunMode(mode).value, "transmitters": n, "seed": seed,
                        **{m: float(tail[m].mean()) for m in SUMMARY_METRICS}})
    runs = pd.DataFrame(per_run)

    grouped = runs.groupby(["transmitters", "mode"], sort=True)
    means = grouped[SUMMARY_METRICS].mean()
    stds = grouped[SUMMARY_METRICS].std(ddof=1).fillna(0.0)
    seeds = {key: sorted(int(v) for v in group["seed"]) for key, group in grouped}

    normalized = {}
    for n, block in means.groupby(level="transmitters"):
        for metric in SUMMARY_METRICS:
            scaled = normalize({mode: float(v) for (_, mode), v in block[metric].items()})
            for mode, value in scaled.items():
                normalized.setdefault((n, mode), {})[metric] = value

    rows = [
        SummaryRow(
            mode=RunMode(mode),
            transmitters=int(n),
            seeds=seeds[(n, mode)],
            mean={m: float(means.loc[(n, mode), m]) for m in SUMMARY_METRICS},
            std={m: float(stds.loc[(n, mode), m]) for m in SUMMARY_METRICS},
            normalized=normalized[(n, mode)],
        )
        for n, mode in means.index
    ]
    return Summary(final_k=final_k, rows=rows)


def _delta_pct(feddrl: float, baseline: float) -> Optional[float]:
    # undefined against a zero baseline; exported as null
    if baseline == 0:
        return 0.0 if feddrl == 0 else None
    return (feddrl - baseline) / abs(baseline) * 100.0


def compare(summary: Summary) -> ComparisonTable:
    """Percentage deltas of FedDRL over IDRL and RA, per transmitter count and metric."""
    by_n: Dict[int, Dict[RunMode, SummaryRow]] = {}
    for row in summary.rows:
        by_n.setdefault(row.transmitters, {})[row.mode] = row

    rows = []
    baselines_seen = None
    for n in sorted(by_n):
        modes = by_n[n]
        if RunMode.FEDDRL not in modes:
            raise ExperimentError(f"No FedDRL runs for N={n}")
        baselines = [m for m in (RunMode.IDRL, RunMode.RA) if m in modes]
        if not baselines:
            raise ExperimentError(f"Need a baseline mode next to FedDRL for N={n}")
        if baselines_seen is not None and baselines != baselines_seen:
            raise ExperimentError("Mismatched run grids: modes differ between transmitter counts")
        baselines_seen = baselines

        fed = modes[RunMode.FEDDRL]
        for baseline in baselines:
            base = modes[baseline]
            if sorted(base.seeds) != sorted(fed.seeds):
                raise ExperimentError(f"Mismatched run grids: seeds differ between feddrl and {baseline.value} "
                                      f"for N={n}")
            for metric in SUMMARY_METRICS:
                rows.append(ComparisonRow(
                    transmitters=n,
                    baseline=baseline,
                    metric=metric,
                    feddrl=fed.mean[metric],
                    baseline_value=base.mean[metric],
                    delta_pct=_delta_pct(fed.mean[metric], base.mean[metric]),
                ))
    return ComparisonTable(rows=rows)


def comparison_frame(table: ComparisonTable) -> pd.DataFrame:
    frame = pd.DataFrame([r.model_dump(mode="json") for r in table.rows])
    if frame.empty:
        return frame
    return frame[["transmitters", "baseline", "metric", "feddrl", "baseline_value", "delta_pct"]]


def load_summary(in_dir: Union[str, Path], final_k: Optional[int] = None) -> Summary:
    """summary.json when present and no window is requested, else recomputed from the run CSVs."""
    path = Path(in_dir) / SUMMARY_FILE
    if final_k is None and path.exists():
        try:
            return Summary.model_validate_json(path.read_text())
        except (OSError, ValidationError) as e:
            raise ExperimentError(f"Cannot read {path}: {e}")
    return summarize(load_results(in_dir), final_k or 10)
