"""CLI, configuration, and batch orchestration."""

from .checks import CheckResult, all_passed, run_checks
from .config import ExperimentConfig, SweepRanges, apply_overrides, dump_config, load_config
from .panels import emit_toy_panels
from .runner import (
    SweepResult,
    SweepRow,
    draw_start_batch,
    promote_best,
    reference_sample,
    run_sample,
    run_sweep,
    write_samples_csv,
)
