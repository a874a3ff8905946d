"""Training, evaluation, inference and the command-line interface."""
from .config import TrainConfig, load_config, save_config
from .train import (PairSampler, RunLog, TrainingHalted, evaluate, infer, load_model,
                    save_model, train)

__all__ = ["TrainConfig", "load_config", "save_config", "PairSampler", "RunLog",
           "TrainingHalted", "evaluate", "infer", "load_model", "save_model", "train"]
