"""Full-reference quality prediction for ambisonic and binaural audio."""

from .errors import DataError, NumericalError, SpatialQError
from .features import AnalysisConfig
from .hoa import SoundFieldSignal
from .pipeline import MetricScore, score_pair
from .qnet import ModelParams, NetConfig, init_params, load_params, param_count, save_params

__all__ = [
    "AnalysisConfig",
    "DataError",
    "MetricScore",
    "ModelParams",
    "NetConfig",
    "NumericalError",
    "SoundFieldSignal",
    "SpatialQError",
    "init_params",
    "load_params",
    "param_count",
    "save_params",
    "score_pair",
]
