from .backend import available_backends, get_backend, set_backend
from .gin import SIGMA_FLOOR, GinNet, NetSpec, VocabularyMismatch, graph_arrays
from .train import (
    PointPredictor,
    TrainConfig,
    TrainedPredictor,
    TrainingError,
    UncertaintyPredictor,
    embed,
    predict_point,
    predict_uncertainty,
    thompson_sample,
    train_point,
    train_uncertainty,
)
from .mlp import MlpPredictor, baseline_mlp
