"""File formats, run configuration, and the batch workflows."""

from .config import RunConfig, load_config, parse_config_text
from .datasets import (
    Dataset,
    bundled_config_path,
    bundled_path,
    load_adjacency,
    load_dataset,
    parse_adjacency_text,
    parse_dataset_text,
)
from .workflows import (
    WorkflowResult,
    parse_results_csv,
    run_fit,
    run_report,
    run_sensitivity,
    run_simulation_study,
)

__all__ = [
    "Dataset",
    "RunConfig",
    "WorkflowResult",
    "bundled_config_path",
    "bundled_path",
    "load_adjacency",
    "load_config",
    "load_dataset",
    "parse_adjacency_text",
    "parse_config_text",
    "parse_dataset_text",
    "parse_results_csv",
    "run_fit",
    "run_report",
    "run_sensitivity",
    "run_simulation_study",
]
