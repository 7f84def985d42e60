from .config import ExperimentConfig, EvalSpec, LossSpec, ModelSpec, OptimSpec, TrainSpec, load_config, parse_config
from .runner import RunResult, compare, gamma_trace, run, write_gamma_trace

__all__ = [
    "EvalSpec", "ExperimentConfig", "LossSpec", "ModelSpec", "OptimSpec", "RunResult", "TrainSpec",
    "compare", "gamma_trace", "load_config", "parse_config", "run", "write_gamma_trace",
]
