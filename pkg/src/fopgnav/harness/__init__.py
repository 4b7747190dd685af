"""Experiment runner: configs, training runs, evaluation, ablations and plots."""

from .ablate import Matrix, ablate, load_matrix
from .benchmark import load_benchmark, write_benchmark
from .config import ConfigError, EvalConfig, ExperimentConfig, dumps, load, loads
from .evaluate import EvalReport, LevelReport, evaluate
from .metrics import EVAL_FIELDS, TRAIN_FIELDS, CsvLog, SchemaError, read_csv
from .plot import plot
from .run import RunResult, load_checkpoint, run, run_file

__all__ = [
    "ConfigError", "CsvLog", "EVAL_FIELDS", "EvalConfig", "EvalReport", "ExperimentConfig",
    "LevelReport", "Matrix", "RunResult", "SchemaError", "TRAIN_FIELDS", "ablate", "dumps",
    "evaluate", "load", "load_benchmark", "load_checkpoint", "loads", "load_matrix", "plot",
    "read_csv", "run", "run_file", "write_benchmark",
]
