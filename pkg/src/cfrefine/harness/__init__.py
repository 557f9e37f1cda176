"""Batch orchestration, persistence, reports and the evaluation utilities behind the CLI."""

from cfrefine.harness.cda import emit_cda, score_predictions
from cfrefine.harness.config import RunConfig
from cfrefine.harness.dataset import DatasetSchema, load_dataset, sample_instances
from cfrefine.harness.judge import judge_run
from cfrefine.harness.reports import report
from cfrefine.harness.runner import PartialFailure, ablation_suite, aggregate_metrics, run_batch

__all__ = [
    "DatasetSchema",
    "PartialFailure",
    "RunConfig",
    "ablation_suite",
    "aggregate_metrics",
    "emit_cda",
    "judge_run",
    "load_dataset",
    "report",
    "run_batch",
    "sample_instances",
    "score_predictions",
]
