"""
Temporal workflow that executes a benchmark plan on a worker.

Note:
- Runs execute one after another by default so wall-clock timings do not interfere;
  parallel_runs gathers them concurrently for sweeps where timing does not matter
- A failed run is not retried: a fit is deterministic, so a retry fails the same way
"""

import asyncio
from datetime import timedelta
from typing import Any, Callable, Dict, List

from application_sdk.observability.decorators.observability_decorator import (
    observability,
)
from application_sdk.observability.logger_adaptor import get_logger
from application_sdk.observability.metrics_adaptor import get_metrics
from application_sdk.observability.traces_adaptor import get_traces
from temporalio import workflow
from temporalio.common import RetryPolicy

with workflow.unsafe.imports_passed_through():
    from app.activities import BenchActivities
    from app.bench import BenchPlan

logger = get_logger(__name__)
workflow.logger = logger
metrics = get_metrics()
traces = get_traces()

RUN_TIMEOUT = timedelta(hours=6)
HEARTBEAT_TIMEOUT = timedelta(minutes=2)


def plan_args(plan: BenchPlan, parallel_runs: bool = False) -> Dict[str, Any]:
    return {
        "runs": [run.to_dict() for run in plan.runs],
        "output_dir": str(plan.output_dir),
        "watts": plan.watts,
        "parallel_runs": parallel_runs,
    }


@workflow.defn
class BenchWorkflow:
    @observability(logger=logger, metrics=metrics, traces=traces)
    @workflow.run
    async def run(self, workflow_config: Dict[str, Any]) -> Dict[str, str]:
        """
        Run the workflow.

        :param workflow_config: Serialised plan from plan_args.
        :return: Output name to file path.
        """
        activities_instance = BenchActivities()

        workflow_args: Dict[str, Any] = await workflow.execute_activity_method(
            activities_instance.prepare,
            workflow_config,
            start_to_close_timeout=timedelta(minutes=10),
            heartbeat_timeout=HEARTBEAT_TIMEOUT,
        )

        retry_policy = RetryPolicy(
            maximum_attempts=3,
            backoff_coefficient=2,
            non_retryable_error_types=["RunFailedError", "PlanError"],
        )

        def fit_run(entry: Dict[str, Any]):
            return workflow.execute_activity_method(
                activities_instance.execute_run,
                entry,
                retry_policy=retry_policy,
                start_to_close_timeout=RUN_TIMEOUT,
                heartbeat_timeout=HEARTBEAT_TIMEOUT,
            )

        if workflow_args.get("parallel_runs"):
            results = await asyncio.gather(*(fit_run(entry) for entry in workflow_args["runs"]))
        else:
            results = []
            for entry in workflow_args["runs"]:
                results.append(await fit_run(entry))

        written: Dict[str, str] = await workflow.execute_activity_method(
            activities_instance.write_reports,
            {**workflow_args, "results": list(results)},
            retry_policy=retry_policy,
            start_to_close_timeout=timedelta(minutes=10),
            heartbeat_timeout=HEARTBEAT_TIMEOUT,
        )
        logger.info(f"plan finished: {len(results)} runs, outputs in {workflow_args['output_dir']}")
        return written

    @staticmethod
    def get_activities(activities: BenchActivities) -> List[Callable[..., Any]]:
        """Get the list of activities for the workflow.

        Args:
            activities: The activities instance containing the workflow activities.

        Returns:
            List[Callable[..., Any]]: A list of activity methods that can be executed by the workflow.
        """
        return [
            activities.prepare,
            activities.execute_run,
            activities.write_reports,
        ]
