"""Interaction discovery with random partitions, association rules and
predictive-density tests."""

from .config import ConfigError, McmcConfig, PriorConfig
from .core import ColumnSpec, DataError, Dataset, discretize, load_dataset, make_dataset, standardize
from .estimators import PPMxOrdinalClassifier, PPMxRegressor, RAIDInteractionDetector
from .pipeline import PipelineConfig, run_pipeline
from .ppmx import CohesionSpec, Partition, SimilarityHyper
from .sampler import PosteriorDraws, compute_lpml, run_mcmc
from .simgen import GeneratorSpec, gen_ordinal_latent, gen_toy, lm_detect, run_study

__version__ = "0.1.0"

__all__ = [
    "ColumnSpec", "CohesionSpec", "ConfigError", "DataError", "Dataset", "GeneratorSpec", "McmcConfig",
    "Partition", "PipelineConfig", "PosteriorDraws", "PPMxOrdinalClassifier", "PPMxRegressor",
    "PriorConfig", "RAIDInteractionDetector", "SimilarityHyper", "compute_lpml", "discretize",
    "gen_ordinal_latent", "gen_toy", "lm_detect", "load_dataset", "make_dataset", "run_mcmc",
    "run_pipeline", "run_study", "standardize",
]
