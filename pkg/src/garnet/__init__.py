"""Garment shape and weight recognition from video sequences via a learned 2D similarity map."""

from .checkpoint import ModelCheckpoint
from .data import Dataset, SynthSpec, VideoSequence, ingest, loocv_splits, synth_generate
from .decision import DecisionState, evaluate_batch, evaluate_sequence
from .errors import ConfigError, GarnetError, InputError, NumericError, ParseError
from .nn import Adam, Network
from .simmap import GarmentCluster, SimilarityMap
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Adam", "ConfigError", "Dataset", "DecisionState", "GarmentCluster", "GarnetError", "InputError",
    "ModelCheckpoint", "Network", "NumericError", "ParseError", "SimilarityMap", "SynthSpec", "TrainConfig",
    "VideoSequence", "evaluate_batch", "evaluate_sequence", "ingest", "loocv_splits", "synth_generate", "train",
]
