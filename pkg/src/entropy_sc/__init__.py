"""Probabilistic sparse coding trained with an analytic, entropy-based ELBO."""

from .model import Dataset, ModelParams, PosteriorSet, normalize_columns, sample_generative
from .objectives import (AnnealingWeights, ElboBreakdown, classical_elbo, classical_elbo_gradients,
                         entropy_elbo, entropy_elbo_gradients, lambda_opt, sigma2_opt)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "ModelParams", "PosteriorSet", "normalize_columns", "sample_generative",
    "AnnealingWeights", "ElboBreakdown", "classical_elbo", "classical_elbo_gradients", "entropy_elbo",
    "entropy_elbo_gradients", "lambda_opt", "sigma2_opt",
]
