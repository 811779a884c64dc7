"""BatchEnsemble: ensembles from rank-1 modulations of shared weights, in numpy."""
from .core import SeededRng, hadamard, matmul, outer, sign_vector, softmax_rows
from .data import Dataset, Task, TaskSequence, corrupt, gen_blobs, load_idx, split_tasks, subsample
from .errors import (ArgumentError, BatchEnsembleError, ConfigError, FormatError, MemberIndexError,
                     ShapeError, StateError, TrainingError)
from .inference import (PredictionBundle, ensemble_predict, mc_dropout_predict, member_predict,
                        naive_ensemble_predict)
from .layers import BatchEnsembleLayer, DenseLayer, DropoutLayer, be_backward, be_forward
from .lifelong import evaluate_lifelong, param_overhead, train_sequence
from .metrics import disagreement, diversity_profile, ece, predictive_entropy
from .model import Model, build_mlp
from .training import TrainConfig, assign_subbatches, decay_gradient, lr_at, softmax_xent, train

__version__ = "0.1.0"

__all__ = [
    "SeededRng", "hadamard", "matmul", "outer", "sign_vector", "softmax_rows",
    "Dataset", "Task", "TaskSequence", "corrupt", "gen_blobs", "load_idx", "split_tasks", "subsample",
    "ArgumentError", "BatchEnsembleError", "ConfigError", "FormatError", "MemberIndexError",
    "ShapeError", "StateError", "TrainingError",
    "PredictionBundle", "ensemble_predict", "mc_dropout_predict", "member_predict", "naive_ensemble_predict",
    "BatchEnsembleLayer", "DenseLayer", "DropoutLayer", "be_backward", "be_forward",
    "evaluate_lifelong", "param_overhead", "train_sequence",
    "disagreement", "diversity_profile", "ece", "predictive_entropy",
    "Model", "build_mlp",
    "TrainConfig", "assign_subbatches", "decay_gradient", "lr_at", "softmax_xent", "train",
]
