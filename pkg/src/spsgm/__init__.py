"""Score-based generative modelling of stochastic processes in a spectral basis.

Functions are projected onto a truncated Mercer eigenbasis (Nystrom), the
whitened coefficients are modelled with a score network trained by denoising
score matching, and new functions are drawn by reverse-time diffusion and
reconstruction at arbitrary input points.
"""

from .data import FunctionalDataset, quadratic_generate
from .diffusion import DiffusionConfig, reverse_sample
from .eigensystem import Eigensystem, TruncationConfig, build_eigensystem, select_truncation
from .kernels import KernelSpec
from .score_net import ScoreNetwork, TrainConfig, train
from .spectral import FunctionSample, marginal_eval, project, reconstruct

__all__ = [
    "DiffusionConfig",
    "Eigensystem",
    "FunctionSample",
    "FunctionalDataset",
    "KernelSpec",
    "ScoreNetwork",
    "TrainConfig",
    "TruncationConfig",
    "build_eigensystem",
    "marginal_eval",
    "project",
    "quadratic_generate",
    "reconstruct",
    "reverse_sample",
    "select_truncation",
    "train",
]
__version__ = "0.1.0"
