"""
Command-line front end: train, predict, bench, worker, cost and synth.

Note:
- Exit codes: 0 success, 1 engine or run failure (bench names the failing run),
  2 usage error
- RELM_WORKERS caps the worker count of every parallel backend
"""

import argparse
import asyncio
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from app.architectures import ArchitectureSpec, ArchKind, init_weights
from app.bench import BenchPlan, load_plan, run_plan
from app.constants import DEFAULT_BLOCK_SIZE, DEFAULT_SPLIT
from app.cost_model import measure_costs, predict_costs, write_cost_csv
from app.dataset import RawSeries, apply_normalization, load_csv, normalize_split, window
from app.errors import RelmError, RunFailedError
from app.hidden import Backend, ExecConfig
from app.synthetic import SynthKind, synth_series, write_series_csv
from app.tensor import SeededRng
from app.trainer import Feedback, evaluate, fit, load_model, predict, rmse, save_model
from app.worker import TASK_QUEUE, connect, submit_plan
from app.worker import run_worker as serve_bench_worker
from application_sdk.observability.logger_adaptor import get_logger
from temporalio.client import WorkflowFailureError

logger = get_logger(__name__)

TILE_CHOICES = (16, 32)
MEASURE_ROWS = 2


def _columns(raw: str) -> List[str]:
    names = [name.strip() for name in raw.split(",") if name.strip()]
    return names


def _load_series(path: str, column: str) -> RawSeries:
    names = _columns(column)
    return load_csv(path, names[0] if len(names) == 1 else names)


def _add_arch_arguments(parser: argparse.ArgumentParser, hidden_default: Optional[int] = None) -> None:
    parser.add_argument("--arch", required=True, choices=[kind.value for kind in ArchKind])
    parser.add_argument(
        "--hidden", "--M", dest="hidden", type=int, required=hidden_default is None,
        default=hidden_default, help="hidden neurons M",
    )
    parser.add_argument("--lags", "--Q", dest="lags", type=int, required=True, help="lags Q")
    parser.add_argument("--F", dest="F", type=int, default=2, help="NARMAX output-feedback lags")
    parser.add_argument("--R", dest="R", type=int, default=2, help="NARMAX error-feedback lags")


def _add_exec_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", choices=[b.value for b in Backend], default=Backend.SEQUENTIAL.value)
    parser.add_argument("--tile", type=int, choices=TILE_CHOICES, default=DEFAULT_BLOCK_SIZE)
    parser.add_argument("--workers", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relm", description="Non-iterative recurrent ELM training and benchmarks"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="fit a model and write it with its evaluation report")
    _add_arch_arguments(train)
    _add_exec_arguments(train)
    train.add_argument("--data", required=True, help="CSV file")
    train.add_argument("--column", required=True, help="column name, or comma-separated names (target first)")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--split", type=float, default=DEFAULT_SPLIT)
    train.add_argument("--out", required=True, help="model file")
    train.add_argument("--report", default=None, help="evaluation CSV (default: <out>.report.csv)")
    train.set_defaults(handler=run_train)

    pred = commands.add_parser("predict", help="predict with a saved model")
    pred.add_argument("--model", required=True)
    pred.add_argument("--data", required=True)
    pred.add_argument("--column", required=True, help="column name, or comma-separated names as used in training")
    pred.add_argument("--out", required=True, help="predictions CSV")
    pred.add_argument("--recursive", action="store_true", help="feed back own predictions (jordan, narmax)")
    pred.set_defaults(handler=run_predict)

    bench = commands.add_parser("bench", help="execute a benchmark plan")
    bench.add_argument("--plan", required=True, help="TOML plan file")
    bench.add_argument("--out", default=None, help="output directory (overrides the plan)")
    bench.add_argument("--watts", type=float, default=None, help="watts for the joules estimate")
    bench.add_argument("--parallel-runs", action="store_true", help="run plan entries concurrently")
    bench.add_argument("--temporal-host", default=None, help="submit to a Temporal worker at host:port")
    bench.add_argument("--task-queue", default=TASK_QUEUE)
    bench.set_defaults(handler=run_bench)

    worker = commands.add_parser("worker", help="serve bench workflows from a Temporal task queue")
    worker.add_argument("--temporal-host", required=True, help="Temporal frontend host:port")
    worker.add_argument("--task-queue", default=TASK_QUEUE)
    worker.set_defaults(handler=run_worker)

    cost = commands.add_parser("cost", help="per-cell memory and FLOP counts")
    _add_arch_arguments(cost, hidden_default=10)
    cost.add_argument("--S", dest="S", type=int, default=1, help="input features S")
    cost.add_argument("--tile", type=int, choices=TILE_CHOICES, default=DEFAULT_BLOCK_SIZE)
    cost.add_argument("--backend", choices=[b.value for b in Backend], default=Backend.BASIC_PARALLEL.value)
    cost.add_argument("--measure", action="store_true", help="also replay the backend with counters")
    cost.add_argument("--seed", type=int, default=0)
    cost.add_argument("--out", default="cost.csv")
    cost.set_defaults(handler=run_cost)

    synth = commands.add_parser("synth", help="write a synthetic series as CSV")
    synth.add_argument("--kind", choices=[k.value for k in SynthKind], required=True)
    synth.add_argument("--length", type=int, required=True)
    synth.add_argument("--noise", type=float, default=0.0)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    synth.set_defaults(handler=run_synth)

    return parser


def run_train(args: argparse.Namespace) -> int:
    series = _load_series(args.data, args.column)
    spec = ArchitectureSpec(
        kind=ArchKind(args.arch), M=args.hidden, Q=args.lags, S=series.n_features, F=args.F, R=args.R
    )
    ds = normalize_split(window(series, spec.Q), args.split)
    cfg = ExecConfig(backend=Backend(args.backend), block_size=args.tile, worker_count=args.workers)
    model = fit(ds, spec, cfg, args.seed)
    report = evaluate(model, ds)
    save_model(model, args.out)

    row = {
        "arch": spec.kind.value,
        "M": spec.M,
        "Q": spec.Q,
        "S": spec.S,
        "backend": cfg.backend.value,
        "seed": args.seed,
        **report.to_row(),
        **{f"{name}_seconds": value for name, value in asdict(model.timing).items()},
        "rank_flag": model.rank_flag.value,
    }
    frame = pd.DataFrame([row])
    report_path = Path(args.report or f"{args.out}.report.csv")
    frame.to_csv(report_path, index=False)
    print(frame.to_markdown(index=False))
    logger.info(f"model written to {args.out}, report to {report_path}")
    return 0


def run_predict(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    series = _load_series(args.data, args.column)
    ds = window(series, model.spec.Q)
    if model.norm_params is not None:
        ds = apply_normalization(ds, model.norm_params)
    feedback = Feedback.RECURSIVE if args.recursive else Feedback.TEACHER
    y_hat = predict(model, ds, feedback=feedback)
    frame = pd.DataFrame(
        {
            "row": np.arange(ds.n),
            "y": ds.denormalize_target(ds.Y),
            "y_hat": ds.denormalize_target(y_hat),
        }
    )
    frame.to_csv(args.out, index=False)
    print(f"{ds.n} predictions written to {args.out}; rmse={rmse(frame['y_hat'], frame['y']):.6f}")
    return 0


def run_bench(args: argparse.Namespace) -> int:
    plan = load_plan(args.plan, output_dir=args.out, watts=args.watts)
    if args.temporal_host:
        written = asyncio.run(_submit(plan, args))
    else:
        written = run_plan(plan, parallel_runs=args.parallel_runs)
    speedup = pd.read_csv(written["speedup"])
    print(speedup.to_markdown(index=False))
    print(f"outputs in {plan.output_dir}")
    return 0


async def _submit(plan: BenchPlan, args: argparse.Namespace) -> Dict[str, str]:
    client = await connect(args.temporal_host)
    return await submit_plan(client, plan, args.parallel_runs, args.task_queue)


def run_worker(args: argparse.Namespace) -> int:
    asyncio.run(serve_bench_worker(args.temporal_host, args.task_queue))
    return 0


def _counting_dataset(spec: ArchitectureSpec, seed: int):
    """A few rows of seeded data with S features; counts do not depend on the values."""
    length = spec.Q + MEASURE_ROWS
    columns = [synth_series(SynthKind.SINE, length, noise=0.1, seed=seed + s).values for s in range(spec.S)]
    return window(RawSeries(np.column_stack(columns), name="counting"), spec.Q)


def run_cost(args: argparse.Namespace) -> int:
    spec = ArchitectureSpec(
        kind=ArchKind(args.arch), M=args.hidden, Q=args.lags, S=args.S, F=args.F, R=args.R
    )
    cfg = ExecConfig(backend=Backend(args.backend), block_size=args.tile)
    if args.measure:
        weights = init_weights(spec, SeededRng(args.seed))
        report = measure_costs(_counting_dataset(spec, args.seed), spec, weights, cfg)
    else:
        report = predict_costs(spec, cfg)
    write_cost_csv([report], args.out)
    print(pd.DataFrame([report.to_row()]).to_markdown(index=False))
    return 0


def run_synth(args: argparse.Namespace) -> int:
    series = synth_series(args.kind, args.length, args.noise, args.seed)
    write_series_csv(series, args.out)
    print(f"{len(series)} values written to {args.out}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.handler(args)
    except RunFailedError as exc:
        logger.error(f"bench run '{exc.run_name}' failed: {exc.cause}")
        print(f"error: run '{exc.run_name}' failed: {exc.cause}", file=sys.stderr)
        return 1
    except (RelmError, OSError) as exc:
        logger.error(f"{args.command} failed: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except WorkflowFailureError as exc:
        logger.error(f"bench workflow failed: {exc.cause}")
        print(f"error: bench workflow failed: {exc.cause}", file=sys.stderr)
        return 1
