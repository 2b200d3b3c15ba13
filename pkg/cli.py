"""Command line entry point: run, compare, trace and serve."""
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from harness import (
    comparison_frame,
    compare,
    load_config,
    load_summary,
    run_experiment,
    run_trace,
    with_experiment_overrides,
)
from models import RunConfig
from schemas import SimulationException

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "FEDRAN_LOG_LEVEL"


def configure_logging() -> None:
    level = os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = with_experiment_overrides(
        cfg,
        modes=args.mode,
        seeds=args.seeds,
        output_dir=args.out,
        trace=True if args.trace else None,
    )
    summary = run_experiment(cfg, workers=args.workers)
    for row in summary.rows:
        print(f"{row.mode.value:>7} N={row.transmitters:<3} "
              f"throughput={row.mean['system_throughput_bps'] / 1e6:.3f} Mbps "
              f"energy={row.mean['avg_energy_mj']:.5f} mJ "
              f"efficiency(norm)={row.normalized['avg_eff_bits_per_mj']:.3f}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    table = compare(load_summary(args.in_dir, args.final_k))
    print(comparison_frame(table).to_string(index=False))
    return 0


def cmd_trace(args: argparse.Namespace) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    trace = run_trace(cfg, args.steps, args.seed)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="\n") as stream:
            trace.write_ndjson(stream)
    else:
        trace.write_ndjson(sys.stdout)
    if not trace.check_ordering():
        logger.error("❌ Signaling trace violates the per-step interface order")
        return 1
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    os.environ["FEDRAN_OUTPUT_DIR"] = args.out
    uvicorn.run("main:app", host=args.host, port=args.port, reload=False)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedran", description="FedDRL transmitter reconfiguration simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run training experiments and write per-round CSVs")
    run.add_argument("--config", help="INI config file (defaults apply when omitted)")
    run.add_argument("--mode", help="feddrl, idrl, ra or a comma separated list")
    run.add_argument("--seeds", help="Comma separated seeds, e.g. 1,2,3")
    run.add_argument("--out", help="Output directory")
    run.add_argument("--workers", type=int, default=1, help="Parallel worker processes")
    run.add_argument("--trace", action="store_true", help="Also write the signaling trace of every run")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="Percentage deltas of FedDRL over the baselines")
    cmp_.add_argument("--in", dest="in_dir", required=True, help="Directory written by 'run'")
    cmp_.add_argument("--final-k", type=int, default=None, help="Recompute using the last K rounds")
    cmp_.set_defaults(func=cmd_compare)

    trace = sub.add_parser("trace", help="Signaling trace of random joint actions as NDJSON")
    trace.add_argument("--config", help="INI config file")
    trace.add_argument("--steps", type=int, required=True)
    trace.add_argument("--seed", type=int, default=1)
    trace.add_argument("--out", help="Output file (stdout when omitted)")
    trace.set_defaults(func=cmd_trace)

    serve = sub.add_parser("serve", help="Serve the HTTP API with uvicorn")
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--out", default="results", help="Output directory holding runs.db")
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SimulationException as e:
        logger.error(f"❌ {e.message}")
        print(f"error: {e.message}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception(f"❌ Unexpected error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
