"""Self-consistent shifted-target GP theory for finite linear CNNs and quadratic networks."""

__version__ = "0.1.0"

from .datagen import CnnArch, CnnParams, Dataset, QuadArch
from .estimators import LangevinEnsembleRegressor, ShiftedTargetGPRegressor
from .langevin import LangevinConfig, train_ensemble
from .saddle import SaddleConfig, ek_alpha_solve, solve_saddle
from .spectral import SpectralReport, c_crit

__all__ = [
    "CnnArch", "CnnParams", "Dataset", "QuadArch",
    "LangevinEnsembleRegressor", "ShiftedTargetGPRegressor",
    "LangevinConfig", "train_ensemble",
    "SaddleConfig", "ek_alpha_solve", "solve_saddle",
    "SpectralReport", "c_crit",
]
