from .aeforest import AeForestClassifier
from .autoencoder import AutoencoderTransformer
from .base import MissingNormalizationError
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .cnn import CnnWindowClassifier
from .forest import DecisionTree, GiniForest
from .lstm import LstmSequenceClassifier

__all__ = [
    "AeForestClassifier",
    "AutoencoderTransformer",
    "CheckpointError",
    "CnnWindowClassifier",
    "DecisionTree",
    "GiniForest",
    "LstmSequenceClassifier",
    "MissingNormalizationError",
    "load_checkpoint",
    "save_checkpoint",
]
