from landval.neural.gradcheck import GradCheckReport, gradient_check
from landval.neural.layers import bce_loss
from landval.neural.model import Batch, NetConfig, SimilarityNet
from landval.neural.schedule import CosineWarmRestarts, cosine_lr
from landval.neural.train import (
    PairArrays,
    TrainConfig,
    TrainingDivergedError,
    extract_latent,
    predict_scores,
    train,
)

__all__ = [
    "Batch",
    "CosineWarmRestarts",
    "GradCheckReport",
    "NetConfig",
    "PairArrays",
    "SimilarityNet",
    "TrainConfig",
    "TrainingDivergedError",
    "bce_loss",
    "cosine_lr",
    "extract_latent",
    "gradient_check",
    "predict_scores",
    "train",
]
