"""Bose-Hubbard ring toolkit: exact spectra, classical limit, chaos indicators and quench dynamics."""

__version__ = "0.1.0"

from .errors import BhlabError, CapacityError, ConfigError, NumericalError
from .fock import ModelParams, enumerate_basis, solve_model

__all__ = ["BhlabError", "CapacityError", "ConfigError", "NumericalError", "ModelParams",
           "enumerate_basis", "solve_model", "__version__"]
