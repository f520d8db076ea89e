"""Conditional boundary-equilibrium GAN used as a reduced order model, with
classical POD/autoencoder baselines and an evaluation harness."""

from ._jit import HAS_NUMBA
from .data import SnapshotSet, gen_gaussian_dataset, load_csv, save_csv, split
from .inference import PredictiveStats, markov_error_bound, normal_interval, predict_stats
from .model import GaromModel, TrainConfig, TrainingDivergedError, build_model, generate, train
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "HAS_NUMBA",
    "GaromModel",
    "PredictiveStats",
    "SnapshotSet",
    "TrainConfig",
    "TrainingDivergedError",
    "build_model",
    "gen_gaussian_dataset",
    "generate",
    "load_checkpoint",
    "load_csv",
    "markov_error_bound",
    "normal_interval",
    "predict_stats",
    "save_checkpoint",
    "save_csv",
    "split",
    "train",
]
