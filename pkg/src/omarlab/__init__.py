"""Offline multi-agent RL with actor rectification, on small particle tasks, in numpy."""
from .algos import TrainConfig, online_train_run, train_run
from .dataset import Dataset, generate_dataset, load_dataset, normalized_score, save_dataset
from .envs import EnvConfig
from .sampler import SamplerConfig, select_candidate

__all__ = ["Dataset", "EnvConfig", "SamplerConfig", "TrainConfig", "generate_dataset", "load_dataset",
           "normalized_score", "online_train_run", "save_dataset", "select_candidate", "train_run"]
__version__ = "0.1.0"
