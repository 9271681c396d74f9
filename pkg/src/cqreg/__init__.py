"""Censored quantile regression by progressive localized minimization."""

from ._jit import backend
from .core import Dataset, QuantileProcess, StepFunction, evaluate, load_dataset, read_csv
from .estimator import FitConfig, equation_residual, equation_residuals, fit, phi_trace
from .inference import BootstrapSummary, PerturbWeights, bootstrap, perturbed_fit, trimmed_mean_effect

__version__ = "0.1.0"
