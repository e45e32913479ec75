"""Feature-space lottery-ticket lab: DNF toy models, mask discovery and C1 code metrics."""

from ._core import (
    ConfigError,
    DnfTask,
    InputError,
    NumericError,
    RunConfig,
    RunRecord,
    code_distance,
    code_margin,
    embedding_matrix,
    generate_dnf,
    load_record,
    parse_task,
    preset_names,
    run_cli,
    run_ticket_cycle,
    sample_dataset,
    save_record,
    sweep,
    ticket_metrics,
)

__all__ = [
    "ConfigError",
    "DnfTask",
    "InputError",
    "NumericError",
    "RunConfig",
    "RunRecord",
    "code_distance",
    "code_margin",
    "embedding_matrix",
    "generate_dnf",
    "load_record",
    "parse_task",
    "preset_names",
    "run_cli",
    "run_ticket_cycle",
    "sample_dataset",
    "save_record",
    "sweep",
    "ticket_metrics",
]
