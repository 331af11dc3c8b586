"""Tensor-basis emulators for spatiotemporal simulator ensembles at one or two fidelities."""

from .baseline import NaiveGPModel, fit_naive, predict_naive
from .exceptions import (ConfigError, ContractError, DegenerateInputError, DiagnosticError,
                         DimensionError, DomainError, FactorizationError, FitError, FormatError,
                         MFTensorError, NotFittedError, NumericError, SamplingError)
from .gp import GPHyperparams
from .mcmc import MCMCConfig, PosteriorSamples, split_rhat
from .mf_emulator import MFEmulator, fit_mf, predict_mf, predict_mf_many
from .prediction import PredictionResult
from .sf_emulator import SFEmulator, fit_sf, predict_sf, predict_sf_many
from .tensor import DenseTensor, fold, mode_product, read_mft, unfold, write_mft
from .transform import TransformSpec
from .tucker import TuckerModel, hooi, hosvd, reconstruct, select_ranks

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "DegenerateInputError", "DenseTensor", "DiagnosticError",
    "DimensionError", "DomainError", "FactorizationError", "FitError", "FormatError",
    "GPHyperparams", "MCMCConfig", "MFEmulator", "MFTensorError", "NaiveGPModel",
    "NotFittedError", "NumericError", "PosteriorSamples", "PredictionResult", "SFEmulator",
    "SamplingError", "TransformSpec", "TuckerModel", "fit_mf", "fit_naive", "fit_sf", "fold",
    "hooi", "hosvd", "mode_product", "predict_mf", "predict_mf_many", "predict_naive",
    "predict_sf", "predict_sf_many", "read_mft", "reconstruct", "select_ranks", "split_rhat",
    "unfold", "write_mft",
]
