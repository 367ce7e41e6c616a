"""Node anomaly scoring by diffusion-based reconstruction of ego-graphs."""
from ._kernels import backend
from .ego import EgoConfig
from .errors import (ContractError, DataError, EgoDiffError, NormalizationError, NumericalError,
                     SolverDivergence)
from .graph import DenseEgoGraph, SparseNetwork
from .io import SynthConfig, generate_synthetic, load_bundle, save_bundle
from .model import ModelConfig, ScoreModel, load_checkpoint, save_checkpoint
from .scoring import ScoringConfig, ScoreReport, score_all
from .sde import VpSde
from .solvers import SolverConfig
from .train import TrainConfig, standardize_features, train

__version__ = "0.1.0"
