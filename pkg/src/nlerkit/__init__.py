"""Score-augmented training and likelihood-based evaluation of neural
likelihood-to-evidence ratio estimators for stochastic process models."""

__version__ = "0.1.0"

from .backend import BACKEND, HAS_NUMBA, USE_NUMBA

__all__ = ["BACKEND", "HAS_NUMBA", "USE_NUMBA", "__version__"]
