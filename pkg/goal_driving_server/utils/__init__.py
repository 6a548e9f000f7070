"""
Utility functions for the goal-driving planner.

This package contains utility modules for files, configuration, state traces
and report documents.
"""

from goal_driving_server.utils.file_utils import (
    check_file_writeable,
    ensure_extension,
    ensure_output_dir,
    read_json,
    read_jsonl,
    write_json,
    write_jsonl,
)
from goal_driving_server.utils.config_utils import (
    PlannerConfig,
    build_config,
    load_config,
    log_level_from_env,
)
from goal_driving_server.utils.trace_utils import (
    TRACE_HEADER,
    read_trace,
    write_trace,
)
from goal_driving_server.utils.report_document import (
    apply_table_style,
    set_cell_border,
    write_summary_document,
)

__all__ = [
    # File utilities
    "check_file_writeable",
    "ensure_extension",
    "ensure_output_dir",
    "read_json",
    "read_jsonl",
    "write_json",
    "write_jsonl",
    # Configuration
    "PlannerConfig",
    "build_config",
    "load_config",
    "log_level_from_env",
    # Traces
    "TRACE_HEADER",
    "read_trace",
    "write_trace",
    # Report documents
    "apply_table_style",
    "set_cell_border",
    "write_summary_document",
]
