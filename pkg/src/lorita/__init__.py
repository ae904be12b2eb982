"""Low-rank-induced training and SVD-based network compression.

Train multilayer perceptrons whose weight matrices are over-parameterized
as products of factors, collapse the factors after training, and compress
the collapsed network by truncating singular values — per layer (LSVT),
globally across pooled normalized spectra (GSVT), or iteratively with a
greedy probe-loss search (ISVT).
"""

from .compress import CompressedModel, CompressionPlan, apply_plan, gsvt, isvt, lsvt
from .data import Dataset, load_idx, subsample, synth_blobs
from .errors import ConfigError, ConvergenceError, ShapeError
from .linalg import BACKEND, SvdResult, schatten_norm, svd, truncate
from .nn import FactorizedDense, Mlp, build_mlp, collapse, init_factorized
from .optim import TrainConfig, train
from .theory import RescalingSpec, SchattenSpec, verify_prop1, verify_prop2

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CompressedModel",
    "CompressionPlan",
    "ConfigError",
    "ConvergenceError",
    "Dataset",
    "FactorizedDense",
    "Mlp",
    "RescalingSpec",
    "SchattenSpec",
    "ShapeError",
    "SvdResult",
    "TrainConfig",
    "apply_plan",
    "build_mlp",
    "collapse",
    "gsvt",
    "init_factorized",
    "isvt",
    "load_idx",
    "lsvt",
    "schatten_norm",
    "subsample",
    "svd",
    "synth_blobs",
    "train",
    "truncate",
    "verify_prop1",
    "verify_prop2",
    "__version__",
]
