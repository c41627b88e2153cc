"""
Activities of the benchmark workflow.

Note:
- Each activity takes and returns plain dicts, so a run is reproducible from its
  serialised plan entry alone
- CPU-bound fitting runs in a worker thread; the compiled kernels release the GIL,
  and auto_heartbeater keeps the activity alive while a long run fits
"""

import asyncio
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict

from app.bench import (
    BenchPlan,
    BenchRun,
    BpttRecord,
    RunRecord,
    execute_run,
    record_run_metrics,
    write_outputs,
)
from app.hidden import warm_up
from application_sdk.activities.common.utils import auto_heartbeater
from application_sdk.observability.decorators.observability_decorator import (
    observability,
)
from application_sdk.observability.logger_adaptor import get_logger
from application_sdk.observability.metrics_adaptor import get_metrics
from application_sdk.observability.traces_adaptor import get_traces
from temporalio import activity

logger = get_logger(__name__)
activity.logger = logger
metrics = get_metrics()
traces = get_traces()


class BenchActivities:
    @observability(logger=logger, metrics=metrics, traces=traces)
    @activity.defn
    @auto_heartbeater
    async def prepare(self, workflow_args: Dict[str, Any]) -> Dict[str, Any]:
        """Compile every kernel specialisation so no run pays for JIT compilation.

        Args:
            workflow_args: The workflow arguments.

        Returns:
            Dict[str, Any]: The workflow arguments, unchanged.
        """
        await asyncio.to_thread(warm_up)
        logger.info(f"kernels compiled for {len(workflow_args['runs'])} runs")
        return workflow_args

    @observability(logger=logger, metrics=metrics, traces=traces)
    @activity.defn
    @auto_heartbeater
    async def execute_run(self, run_entry: Dict[str, Any]) -> Dict[str, Any]:
        """Fit one plan entry for all its seeds and backends.

        Args:
            run_entry: A serialised BenchRun.

        Returns:
            Dict[str, Any]: `records` and `bptt` lists of plain dicts.

        Raises:
            RunFailedError: The run failed; the error names it.
        """
        run = BenchRun.from_dict(run_entry)
        records, bptt_records = await asyncio.to_thread(execute_run, run)
        record_run_metrics(records)
        return {
            "records": [asdict(record) for record in records],
            "bptt": [asdict(record) for record in bptt_records],
        }

    @observability(logger=logger, metrics=metrics, traces=traces)
    @activity.defn
    @auto_heartbeater
    async def write_reports(self, workflow_args: Dict[str, Any]) -> Dict[str, str]:
        """Write the tables and plots of a finished plan.

        Args:
            workflow_args: The workflow arguments plus `results`, the outputs of
                execute_run, one per run.

        Returns:
            Dict[str, str]: Output name to file path.
        """
        plan = BenchPlan(
            runs=tuple(BenchRun.from_dict(entry) for entry in workflow_args["runs"]),
            output_dir=Path(workflow_args["output_dir"]),
            watts=float(workflow_args["watts"]),
        )
        results = workflow_args["results"]
        records = [RunRecord(**row) for result in results for row in result["records"]]
        bptt_records = [
            BpttRecord(**{**row, "trace": tuple(tuple(point) for point in row["trace"])})
            for result in results
            for row in result["bptt"]
        ]
        written = await asyncio.to_thread(write_outputs, plan, records, bptt_records)
        return {name: str(path) for name, path in written.items()}
