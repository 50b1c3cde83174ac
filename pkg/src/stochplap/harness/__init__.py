"""Experiment harness: configs, headline experiments, reports and the CLI."""
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import run_decay, run_ergodic, run_local_limit, run_measure_limit, run_simulate
from .report import validate_report, write_report
from .selftest import run_selftest
