"""
Benchmark plans: loading, per-run execution, summary tables and plots.

Note:
- A plan is a TOML file of [[runs]]; a run whose `hidden` is a list expands into one
  run per M, so speedup-versus-M sweeps stay one entry in the file
- Every record carries the seed, backend and the plan hash (SHA-256 of the canonical
  JSON of the expanded run entry) needed to re-run it
- Timing tables are only meaningful when runs execute one at a time
"""

import hashlib
import json
import math
import tomllib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from matplotlib.figure import Figure

from app.architectures import Activations, ArchitectureSpec, ArchKind
from app.bptt import SUPPORTED as BPTT_KINDS
from app.bptt import BpttConfig, bptt_fit, time_to_target
from app.constants import DEFAULT_BLOCK_SIZE, DEFAULT_SEEDS, DEFAULT_SPLIT, default_watts
from app.dataset import RawSeries, TimeSeriesDataset, load_csv, normalize_split, window
from app.errors import PlanError, RelmError, RunFailedError
from app.hidden import Backend, ExecConfig, warm_up
from app.synthetic import synth_series
from app.trainer import EvalReport, TrainedModel, evaluate, fit, naive_rmse
from application_sdk.observability.logger_adaptor import get_logger
from application_sdk.observability.metrics_adaptor import MetricType, get_metrics

logger = get_logger(__name__)
metrics = get_metrics()

TARGET_SLACK = 1.1


@dataclass(frozen=True)
class DataSource:
    source: str = "synthetic"
    kind: str = "ar2"
    length: int = 5000
    noise: float = 0.1
    seed: int = 0
    path: Optional[str] = None
    column: Optional[Union[str, List[str]]] = None

    def __post_init__(self):
        if self.source not in ("synthetic", "csv"):
            raise PlanError(f"data source must be 'synthetic' or 'csv', got '{self.source}'")
        if self.source == "csv" and (not self.path or not self.column):
            raise PlanError("csv data sources need both 'path' and 'column'")

    @property
    def label(self) -> str:
        return Path(self.path).stem if self.source == "csv" else self.kind

    def load(self) -> RawSeries:
        if self.source == "csv":
            return load_csv(self.path, self.column)
        return synth_series(self.kind, self.length, self.noise, self.seed)

    def to_dict(self) -> Dict[str, Any]:
        return {key: value for key, value in asdict(self).items() if value is not None}


@dataclass(frozen=True)
class BenchRun:
    name: str
    family: str
    data: DataSource
    spec: ArchitectureSpec
    backends: Tuple[Backend, ...] = (Backend.SEQUENTIAL, Backend.BASIC_PARALLEL, Backend.TILED_PARALLEL)
    tile: int = DEFAULT_BLOCK_SIZE
    workers: Optional[int] = None
    seeds: Tuple[int, ...] = tuple(range(DEFAULT_SEEDS))
    split: float = DEFAULT_SPLIT
    bptt: bool = False
    bptt_config: BpttConfig = field(default_factory=BpttConfig)

    def to_dict(self) -> Dict[str, Any]:
        entry = {
            "name": self.name,
            "family": self.family,
            "data": self.data.to_dict(),
            "spec": self.spec.to_dict(),
            "backends": [backend.value for backend in self.backends],
            "tile": self.tile,
            "workers": self.workers,
            "seeds": list(self.seeds),
            "split": self.split,
            "bptt": self.bptt,
        }
        if self.bptt:
            config = asdict(self.bptt_config)
            config["optimizer"] = self.bptt_config.optimizer.value
            entry["bptt_config"] = config
        return entry

    @classmethod
    def from_dict(cls, entry: Dict[str, Any]) -> "BenchRun":
        spec = dict(entry["spec"])
        activations = spec.pop("activations", None)
        if activations:
            spec["activations"] = Activations.from_dict(activations)
        return cls(
            name=entry["name"],
            family=entry.get("family", entry["name"]),
            data=DataSource(**entry["data"]),
            spec=ArchitectureSpec(**spec),
            backends=tuple(Backend(b) for b in entry["backends"]),
            tile=entry["tile"],
            workers=entry.get("workers"),
            seeds=tuple(entry["seeds"]),
            split=entry["split"],
            bptt=entry["bptt"],
            bptt_config=BpttConfig(**entry.get("bptt_config", {})),
        )

    @property
    def plan_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class BenchPlan:
    runs: Tuple[BenchRun, ...]
    output_dir: Path
    watts: float


@dataclass(frozen=True)
class RunRecord:
    run: str
    family: str
    plan_hash: str
    dataset: str
    arch: str
    M: int
    Q: int
    S: int
    backend: str
    seed: int
    init: float
    h_compute: float
    solve: float
    total: float
    rmse_train: float
    rmse_test: Optional[float]
    rmse_test_original: Optional[float]
    naive_rmse_test: Optional[float]
    rank_flag: str
    beta_digest: str


@dataclass(frozen=True)
class BpttRecord:
    run: str
    plan_hash: str
    arch: str
    M: int
    seed: int
    backend: str
    elm_seconds: float
    elm_test_mse: float
    target_mse: float
    bptt_seconds: float
    bptt_final_mse: float
    bptt_test_mse: Optional[float]
    seconds_to_target: Optional[float]
    trace: Tuple[Tuple[float, float], ...]

    @property
    def reached(self) -> bool:
        return self.seconds_to_target is not None

    @property
    def time_ratio(self) -> Optional[float]:
        """BPTT time-to-target over ELM training time."""
        if self.seconds_to_target is None or self.elm_seconds <= 0.0:
            return None
        return self.seconds_to_target / self.elm_seconds

    def to_row(self) -> Dict[str, Any]:
        row = {name: getattr(self, name) for name in self.__dataclass_fields__ if name != "trace"}
        row.update(reached=self.reached, time_ratio=self.time_ratio)
        return row


def _as_list(value: Any) -> List[Any]:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _expand(entry: Dict[str, Any], index: int) -> List[BenchRun]:
    name = entry.get("name", f"run{index}")
    try:
        data = DataSource(**entry.get("data", {}))
        seeds = entry.get("seeds", DEFAULT_SEEDS)
        seeds = tuple(range(seeds)) if isinstance(seeds, int) else tuple(int(s) for s in seeds)
        backends = tuple(Backend(b) for b in _as_list(entry.get("backends", ["seq", "basic", "tiled"])))
        hidden = _as_list(entry.get("hidden", entry.get("M", 10)))
        bptt_config = BpttConfig(**entry.get("bptt_config", {}))
        runs = []
        for M in hidden:
            spec = ArchitectureSpec(
                kind=ArchKind(entry.get("arch", "elman")),
                M=int(M),
                Q=int(entry.get("lags", entry.get("Q", 10))),
                S=int(entry.get("S", len(data.column) if isinstance(data.column, list) else 1)),
                F=int(entry.get("F", 2)),
                R=int(entry.get("R", 2)),
            )
            runs.append(
                BenchRun(
                    name=name if len(hidden) == 1 else f"{name}-M{M}",
                    family=name,
                    data=data,
                    spec=spec,
                    backends=backends,
                    tile=int(entry.get("tile", DEFAULT_BLOCK_SIZE)),
                    workers=entry.get("workers"),
                    seeds=seeds,
                    split=float(entry.get("split", DEFAULT_SPLIT)),
                    bptt=bool(entry.get("bptt", False)),
                    bptt_config=bptt_config,
                )
            )
        return runs
    except PlanError:
        raise
    except (RelmError, ValueError, TypeError, KeyError) as exc:
        logger.error(f"plan entry '{name}' is invalid: {exc}")
        raise PlanError(f"run '{name}': {exc}") from exc


def load_plan(
    path: Union[str, Path],
    output_dir: Optional[Union[str, Path]] = None,
    watts: Optional[float] = None,
) -> BenchPlan:
    """Read a TOML plan.

    Top-level keys: `output` (directory, default "bench-out") and `watts`;
    each [[runs]] table takes name, arch, hidden (int or list), lags, S, F, R,
    backends, tile, workers, seeds (count or list), split, bptt, an optional
    [runs.bptt_config] and a [runs.data] table (source = "synthetic" with
    kind/length/noise/seed, or source = "csv" with path/column).
    """
    path = Path(path)
    try:
        with path.open("rb") as handle:
            document = tomllib.load(handle)
    except FileNotFoundError as exc:
        raise PlanError(f"plan file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        logger.error(f"cannot parse plan {path}: {exc}")
        raise PlanError(f"cannot parse {path}: {exc}") from exc

    entries = document.get("runs", [])
    if not entries:
        raise PlanError(f"plan {path} has no [[runs]] entries")
    runs = [run for index, entry in enumerate(entries) for run in _expand(entry, index)]
    names = [run.name for run in runs]
    if len(set(names)) != len(names):
        raise PlanError(f"run names must be unique, got {names}")
    return BenchPlan(
        runs=tuple(runs),
        output_dir=Path(output_dir or document.get("output", "bench-out")),
        watts=float(watts if watts is not None else document.get("watts", default_watts())),
    )


def _beta_digest(beta: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(beta).tobytes()).hexdigest()[:16]


def execute_run(run: BenchRun) -> Tuple[List[RunRecord], List[BpttRecord]]:
    """Fit every (seed, backend) pair of one run, plus the BPTT baseline when asked.

    Raises:
        RunFailedError: Any engine, file or CSV parse error, wrapped with the run name.
    """
    try:
        return _execute(run)
    except (RelmError, OSError, pd.errors.ParserError) as exc:
        logger.error(f"run '{run.name}' failed: {exc}")
        raise RunFailedError(run.name, exc) from exc


def _execute(run: BenchRun) -> Tuple[List[RunRecord], List[BpttRecord]]:
    ds = normalize_split(window(run.data.load(), run.spec.Q), run.split)
    naive = naive_rmse(ds, ds.test_rows()) if ds.n_test else None
    plan_hash = run.plan_hash
    records: List[RunRecord] = []
    bptt_records: List[BpttRecord] = []

    for seed in run.seeds:
        reference = None
        for backend in run.backends:
            cfg = ExecConfig(backend=backend, block_size=run.tile, worker_count=run.workers)
            model = fit(ds, run.spec, cfg, seed)
            report = evaluate(model, ds)
            timing = model.timing
            records.append(
                RunRecord(
                    run=run.name,
                    family=run.family,
                    plan_hash=plan_hash,
                    dataset=run.data.label,
                    arch=run.spec.kind.value,
                    M=run.spec.M,
                    Q=run.spec.Q,
                    S=run.spec.S,
                    backend=backend.value,
                    seed=seed,
                    init=timing.init,
                    h_compute=timing.h_compute,
                    solve=timing.solve,
                    total=timing.total,
                    rmse_train=report.rmse_train,
                    rmse_test=report.rmse_test,
                    rmse_test_original=report.rmse_test_original,
                    naive_rmse_test=naive,
                    rank_flag=model.rank_flag.value,
                    beta_digest=_beta_digest(model.beta),
                )
            )
            reference = (backend, model, report)
        if run.bptt and reference is not None:
            bptt_records.append(_bptt_record(run, ds, seed, *reference))

    logger.info(f"run '{run.name}': {len(records)} fits over {len(run.seeds)} seeds")
    return records, bptt_records


def _bptt_record(
    run: BenchRun,
    ds: TimeSeriesDataset,
    seed: int,
    backend: Backend,
    model: TrainedModel,
    report: EvalReport,
) -> BpttRecord:
    if run.spec.kind not in BPTT_KINDS:
        raise PlanError(f"run '{run.name}': bptt baseline supports fully, lstm and gru only")
    rmse_ref = report.rmse_test if report.rmse_test is not None else report.rmse_train
    elm_mse = rmse_ref**2
    target = TARGET_SLACK * elm_mse
    bptt_model, trace = bptt_fit(ds, run.spec, run.bptt_config, seed)
    test_rows = ds.test_rows()
    bptt_test_mse = (
        float(np.mean((bptt_model.predict(ds.X[test_rows]) - ds.Y[test_rows]) ** 2))
        if test_rows.size
        else None
    )
    reached = time_to_target(trace, target)
    if reached is None:
        logger.info(f"run '{run.name}' seed {seed}: bptt never reached mse {target:.6f}")
    return BpttRecord(
        run=run.name,
        plan_hash=run.plan_hash,
        arch=run.spec.kind.value,
        M=run.spec.M,
        seed=seed,
        backend=backend.value,
        elm_seconds=model.timing.total,
        elm_test_mse=elm_mse,
        target_mse=target,
        bptt_seconds=trace.total_seconds,
        bptt_final_mse=trace.epochs[-1].mse,
        bptt_test_mse=bptt_test_mse,
        seconds_to_target=reached,
        trace=tuple((record.seconds, record.mse) for record in trace.epochs),
    )


def runs_frame(records: List[RunRecord]) -> pd.DataFrame:
    return pd.DataFrame([asdict(record) for record in records])


def _seed_ids(seeds: pd.Series) -> str:
    return ";".join(str(int(seed)) for seed in sorted(seeds))


def speedup_table(records: List[RunRecord], watts: float) -> pd.DataFrame:
    """Mean/std wall time per (run, backend), speedup against sequential over matched seeds.

    Joules are an estimate: watts x mean seconds.
    """
    frame = runs_frame(records)
    rows = []
    for (run, backend), group in frame.groupby(["run", "backend"], sort=False):
        sequential = frame[(frame["run"] == run) & (frame["backend"] == Backend.SEQUENTIAL.value)]
        matched = sequential[sequential["seed"].isin(group["seed"])]
        mean_seconds = float(group["total"].mean())
        speedup = (
            float(matched["total"].mean()) / mean_seconds
            if len(matched) and mean_seconds > 0.0
            else math.nan
        )
        digests = dict(zip(matched["seed"], matched["beta_digest"]))
        same_beta = all(
            digests.get(seed, digest) == digest
            for seed, digest in zip(group["seed"], group["beta_digest"])
        )
        first = group.iloc[0]
        rows.append(
            {
                "run": run,
                "family": first["family"],
                "dataset": first["dataset"],
                "arch": first["arch"],
                "backend": backend,
                "M": int(first["M"]),
                "seeds": len(group),
                "seed_ids": _seed_ids(group["seed"]),
                "mean_seconds": mean_seconds,
                "std_seconds": float(group["total"].std(ddof=0)),
                "speedup": speedup,
                "joules_estimate": watts * mean_seconds,
                "beta_matches_sequential": same_beta,
                "plan_hash": first["plan_hash"],
            }
        )
    return pd.DataFrame(rows)


def rmse_table(records: List[RunRecord]) -> pd.DataFrame:
    frame = runs_frame(records)
    summary = (
        frame.groupby(["run", "dataset", "arch", "M", "backend", "plan_hash"], sort=False)
        .agg(
            seeds=("seed", "count"),
            seed_ids=("seed", _seed_ids),
            rmse_train_mean=("rmse_train", "mean"),
            rmse_test_mean=("rmse_test", "mean"),
            rmse_test_std=("rmse_test", lambda s: float(s.std(ddof=0))),
            naive_rmse_test=("naive_rmse_test", "mean"),
        )
        .reset_index()
    )
    return summary


def bptt_table(records: List[BpttRecord]) -> pd.DataFrame:
    return pd.DataFrame([record.to_row() for record in records])


def plot_speedup_vs_m(table: pd.DataFrame, path: Path) -> Path:
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    parallel = table[table["backend"] != Backend.SEQUENTIAL.value]
    for (family, backend), group in parallel.groupby(["family", "backend"], sort=False):
        group = group.sort_values("M")
        ax.plot(group["M"], group["speedup"], marker="o", label=f"{family} ({backend})")
    ax.set_xlabel("hidden neurons M")
    ax.set_ylabel("speedup vs sequential")
    ax.grid(True, linestyle="--", alpha=0.5)
    if len(parallel):
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    return path


def plot_mse_vs_time(records: List[BpttRecord], path: Path) -> Path:
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    for record in records:
        seconds, mse = zip(*record.trace)
        line = ax.plot(seconds, mse, marker=".", label=f"{record.run} seed {record.seed}")[0]
        ax.axhline(record.target_mse, color=line.get_color(), linestyle=":", linewidth=1)
    ax.set_xlabel("training time (s)")
    ax.set_ylabel("training MSE")
    ax.set_yscale("log")
    ax.grid(True, linestyle="--", alpha=0.5)
    if records:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    return path


def _write_table(frame: pd.DataFrame, directory: Path, stem: str) -> None:
    frame.to_csv(directory / f"{stem}.csv", index=False)
    (directory / f"{stem}.md").write_text(frame.to_markdown(index=False) + "\n", encoding="utf-8")


def write_outputs(
    plan: BenchPlan, records: List[RunRecord], bptt_records: List[BpttRecord]
) -> Dict[str, Path]:
    """runs.csv, speedup and rmse tables (CSV + markdown), bptt table and the two SVG plots."""
    out = plan.output_dir
    out.mkdir(parents=True, exist_ok=True)
    runs_frame(records).to_csv(out / "runs.csv", index=False)
    speedup = speedup_table(records, plan.watts)
    _write_table(speedup, out, "speedup")
    _write_table(rmse_table(records), out, "rmse")
    written = {
        "runs": out / "runs.csv",
        "speedup": out / "speedup.csv",
        "rmse": out / "rmse.csv",
        "speedup_plot": plot_speedup_vs_m(speedup, out / "speedup_vs_m.svg"),
    }
    if bptt_records:
        _write_table(bptt_table(bptt_records), out, "bptt")
        written["bptt"] = out / "bptt.csv"
        written["mse_plot"] = plot_mse_vs_time(bptt_records, out / "mse_vs_time.svg")
    logger.info(f"bench outputs written to {out}")
    return written


def record_run_metrics(records: List[RunRecord]) -> None:
    """Per-fit timing and error gauges, labelled so a value traces back to its run."""
    for record in records:
        labels = {
            "run": record.run,
            "backend": record.backend,
            "seed": str(record.seed),
            "plan_hash": record.plan_hash[:12],
        }
        metrics.record_metric(
            name="relm_h_compute_seconds",
            value=record.h_compute,
            metric_type=MetricType.GAUGE,
            labels=labels,
            description="Hidden-state construction time of one fit",
        )
        metrics.record_metric(
            name="relm_solve_seconds",
            value=record.solve,
            metric_type=MetricType.GAUGE,
            labels=labels,
            description="Least-squares readout solve time of one fit",
        )
        if record.rmse_test is not None:
            metrics.record_metric(
                name="relm_rmse_test",
                value=record.rmse_test,
                metric_type=MetricType.GAUGE,
                labels=labels,
                description="Normalised test RMSE of one fit",
            )


def run_plan(plan: BenchPlan, parallel_runs: bool = False) -> Dict[str, Path]:
    """Execute a plan in this process: compile the kernels, fit every run, write the reports.

    Args:
        plan: The loaded plan.
        parallel_runs: Fit runs on a thread pool; timings then interfere.

    Returns:
        Dict[str, Path]: Output name to file path.

    Raises:
        RunFailedError: A run failed; the error names it.
    """
    warm_up()
    if parallel_runs and len(plan.runs) > 1:
        with ThreadPoolExecutor(max_workers=len(plan.runs)) as pool:
            results = list(pool.map(execute_run, plan.runs))
    else:
        results = [execute_run(run) for run in plan.runs]
    records = [record for run_records, _ in results for record in run_records]
    record_run_metrics(records)
    bptt_records = [record for _, run_bptt in results for record in run_bptt]
    logger.info(f"plan finished: {len(results)} runs")
    return write_outputs(plan, records, bptt_records)
