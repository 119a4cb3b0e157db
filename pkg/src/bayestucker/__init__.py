"""Bayesian Tucker decompositions: equivariant normal model, scale-free rank-likelihood model, HOOI baseline."""

__version__ = "0.1.0"

from .als import hooi, hooi_impute
from .diagnostics import (
    center_all_modes,
    effective_sample_size,
    mode_singular_vectors,
    normalized_eigenspectrum,
    relative_squared_error,
)
from .normal_tdm import ChainConfig, ChainState, McmcSamples, PriorSpec, run_chain
from .random_kernels import RngStream
from .sftd import kendall_tau, run_sftd_chain
from .tensor_core import DenseTensor, TuckerModel, hosvd, matricize, multilinear_rank, refold, tucker_product

__all__ = [
    "ChainConfig", "ChainState", "DenseTensor", "McmcSamples", "PriorSpec", "RngStream", "TuckerModel",
    "center_all_modes", "effective_sample_size", "hooi", "hooi_impute", "hosvd", "kendall_tau", "matricize",
    "mode_singular_vectors", "multilinear_rank", "normalized_eigenspectrum", "refold", "relative_squared_error",
    "run_chain", "run_sftd_chain", "tucker_product",
]
