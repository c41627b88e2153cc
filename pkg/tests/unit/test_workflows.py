from pathlib import Path

import pandas as pd
import pytest
from temporalio.client import WorkflowFailureError
from temporalio.exceptions import ActivityError, RetryState
from temporalio.testing import ActivityEnvironment, WorkflowEnvironment

from app.activities import BenchActivities
from app.bench import load_plan
from app.errors import RunFailedError
from app.worker import build_worker, submit_plan
from app.workflows import BenchWorkflow, plan_args

PLAN = """
output = "{output}"

[[runs]]
name = "first"
arch = "gru"
hidden = [2, 3]
lags = 3
backends = ["seq", "basic"]
seeds = 2

[runs.data]
kind = "ar2"
length = 90
"""

TASK_QUEUE = "relm-bench-test"


@pytest.fixture
def plan(tmp_path):
    path = tmp_path / "plan.toml"
    path.write_text(PLAN.format(output=(tmp_path / "out").as_posix()), encoding="utf-8")
    return load_plan(path)


def missing_csv(args, tmp_path):
    args["runs"][0]["data"] = {
        "source": "csv",
        "path": str(tmp_path / "missing.csv"),
        "column": "value",
    }
    return args


class TestActivities:
    async def test_prepare_passes_the_arguments_through(self, plan):
        args = plan_args(plan)
        assert await ActivityEnvironment().run(BenchActivities().prepare, args) == args

    async def test_execute_run_returns_plain_rows(self, plan):
        result = await ActivityEnvironment().run(
            BenchActivities().execute_run, plan.runs[0].to_dict()
        )
        assert len(result["records"]) == 4
        assert result["bptt"] == []
        assert result["records"][0]["plan_hash"] == plan.runs[0].plan_hash

    async def test_write_reports_from_run_results(self, plan):
        activities = BenchActivities()
        env = ActivityEnvironment()
        args = plan_args(plan)
        results = [await env.run(activities.execute_run, entry) for entry in args["runs"]]
        written = await env.run(activities.write_reports, {**args, "results": results})
        assert {"runs", "speedup", "rmse", "speedup_plot"} <= set(written)
        assert all(Path(path).exists() for path in written.values())
        runs = pd.read_csv(written["runs"])
        assert len(runs) == 2 * 2 * 2
        assert set(runs["run"]) == {"first-M2", "first-M3"}

    async def test_failing_run_names_itself(self, plan, tmp_path):
        args = missing_csv(plan_args(plan), tmp_path)
        with pytest.raises(RunFailedError) as excinfo:
            await ActivityEnvironment().run(BenchActivities().execute_run, args["runs"][0])
        assert excinfo.value.run_name == "first-M2"

    def test_workflow_registers_every_activity(self):
        activities = BenchActivities()
        assert BenchWorkflow.get_activities(activities) == [
            activities.prepare,
            activities.execute_run,
            activities.write_reports,
        ]


@pytest.fixture
async def temporal_env():
    try:
        env = await WorkflowEnvironment.start_time_skipping()
    except (RuntimeError, OSError) as exc:
        pytest.skip(f"temporal test server unavailable: {exc}")
    yield env
    await env.shutdown()


@pytest.mark.acceptance
class TestBenchWorkflow:
    async def test_sequential_runs_write_every_table(self, temporal_env, plan):
        async with build_worker(temporal_env.client, TASK_QUEUE):
            written = await submit_plan(temporal_env.client, plan, task_queue=TASK_QUEUE)
        assert {"runs", "speedup", "rmse", "speedup_plot"} <= set(written)
        assert len(pd.read_csv(written["runs"])) == 2 * 2 * 2

    async def test_concurrent_runs_give_the_same_fits(self, temporal_env, plan):
        async with build_worker(temporal_env.client, TASK_QUEUE):
            sequential = pd.read_csv(
                (await submit_plan(temporal_env.client, plan, task_queue=TASK_QUEUE))["runs"]
            )
            concurrent = pd.read_csv(
                (await submit_plan(temporal_env.client, plan, True, TASK_QUEUE))["runs"]
            )
        assert list(sequential["beta_digest"]) == list(concurrent["beta_digest"])

    async def test_failed_run_is_not_retried(self, temporal_env, plan, tmp_path):
        args = missing_csv(plan_args(plan), tmp_path)
        async with build_worker(temporal_env.client, TASK_QUEUE):
            with pytest.raises(WorkflowFailureError) as excinfo:
                await temporal_env.client.execute_workflow(
                    BenchWorkflow.run, args, id="relm-bench-failing", task_queue=TASK_QUEUE
                )
        cause = excinfo.value.cause
        assert isinstance(cause, ActivityError)
        assert cause.cause.type == "RunFailedError"
        assert cause.retry_state == RetryState.NON_RETRYABLE_FAILURE
