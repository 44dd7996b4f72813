from .cli import main
from .config import Config, load_config, parse_config
from .runner import ReportRow, format_rows, run_experiment, run_rates, run_sample, run_transform_check

__all__ = [
    "main",
    "Config",
    "load_config",
    "parse_config",
    "ReportRow",
    "format_rows",
    "run_experiment",
    "run_rates",
    "run_sample",
    "run_transform_check",
]
