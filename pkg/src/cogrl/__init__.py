"""Cognitive model discovery from tutor problem content.

Train a small neural network on each problem's content and correct answer,
read off the sigmoid pre-output layer as the problem's representation,
threshold it into a Q-matrix, evaluate cognitive models with item-stratified
cross-validated Additive Factors Model RMSE, and estimate skill parameters
by simulating apprentice learners over the same feature space.
"""

from . import afm, apprentice, cogmodel, ingest, neuralcore, representation
from .errors import (
    CogrlError,
    ConfigurationError,
    DimensionError,
    FitError,
    InputError,
    NumericError,
)

__version__ = "0.1.0"

__all__ = [
    "CogrlError",
    "ConfigurationError",
    "DimensionError",
    "FitError",
    "InputError",
    "NumericError",
    "afm",
    "apprentice",
    "cogmodel",
    "ingest",
    "neuralcore",
    "representation",
]
