"""Experiment configuration, presets, orchestration and the command line."""

from .config import AlgoSpec, CaseSpec, ExperimentConfig, RoundTableSpec, load_config
from .experiment import ExperimentResult, read_csv, round_table, run_experiment
from .presets import PRESETS, preset
