"""qshield: character-level CNN detection of malicious web request parameters,
wrapped in an online re-learning gateway with a human review loop."""

from .labels import ATTACK_CLASSES, CLASSES
from .model import (
    ModelConfig,
    ModelParams,
    Verdict,
    embedding_distance,
    forward,
    init_params,
    load_model,
    predict,
    save_model,
)
from .training import TrainConfig, TrainHistory, train, warm_start_retrain
from .metrics import MetricsReport, evaluate, evaluate_model
from .vocab import decode, encode, encode_normalized, normalize

__version__ = "0.1.0"

__all__ = [
    "ATTACK_CLASSES",
    "CLASSES",
    "MetricsReport",
    "ModelConfig",
    "ModelParams",
    "TrainConfig",
    "TrainHistory",
    "Verdict",
    "decode",
    "embedding_distance",
    "encode",
    "encode_normalized",
    "evaluate",
    "evaluate_model",
    "forward",
    "init_params",
    "load_model",
    "normalize",
    "predict",
    "save_model",
    "train",
    "warm_start_retrain",
]
