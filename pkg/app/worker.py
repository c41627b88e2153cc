"""
Temporal worker and client helpers for distributed benchmark plans.

Note:
- Numeric and SDK modules pass through the workflow sandbox; the workflow itself
  only orchestrates activities
- `relm bench` without --temporal-host runs the plan in-process instead
"""

import uuid
from typing import Dict

from app.activities import BenchActivities
from app.bench import BenchPlan
from app.errors import ExecutionEnvironmentError
from app.workflows import BenchWorkflow, plan_args
from application_sdk.observability.logger_adaptor import get_logger
from temporalio.client import Client
from temporalio.worker import Worker
from temporalio.worker.workflow_sandbox import SandboxedWorkflowRunner, SandboxRestrictions

logger = get_logger(__name__)

TASK_QUEUE = "relm-bench"
PASSTHROUGH_MODULES = ("app", "application_sdk", "numpy", "numba", "pandas", "matplotlib")


def build_worker(client: Client, task_queue: str = TASK_QUEUE) -> Worker:
    """A worker that serves BenchWorkflow and its activities on `task_queue`."""
    return Worker(
        client,
        task_queue=task_queue,
        workflows=[BenchWorkflow],
        activities=BenchWorkflow.get_activities(BenchActivities()),
        workflow_runner=SandboxedWorkflowRunner(
            restrictions=SandboxRestrictions.default.with_passthrough_modules(*PASSTHROUGH_MODULES)
        ),
    )


async def connect(host: str) -> Client:
    """Connect to a Temporal frontend.

    Raises:
        ExecutionEnvironmentError: The frontend cannot be reached.
    """
    try:
        return await Client.connect(host)
    except RuntimeError as exc:
        logger.error(f"cannot reach Temporal at {host}: {exc}")
        raise ExecutionEnvironmentError(f"cannot reach Temporal at {host}: {exc}") from exc


async def run_worker(host: str, task_queue: str = TASK_QUEUE) -> None:
    client = await connect(host)
    logger.info(f"bench worker polling '{task_queue}' on {host}")
    await build_worker(client, task_queue).run()


async def submit_plan(
    client: Client, plan: BenchPlan, parallel_runs: bool = False, task_queue: str = TASK_QUEUE
) -> Dict[str, str]:
    """Start BenchWorkflow for `plan` and wait for its output paths."""
    workflow_id = f"relm-bench-{uuid.uuid4().hex[:12]}"
    logger.info(f"submitting {len(plan.runs)} runs as workflow {workflow_id}")
    return await client.execute_workflow(
        BenchWorkflow.run,
        plan_args(plan, parallel_runs),
        id=workflow_id,
        task_queue=task_queue,
    )
