"""Joint conditional mean and covariance (COCO) estimation for unbalanced panels."""

from ._backend import BACKEND, COMPILED

__version__ = "0.1.0"

__all__ = ["BACKEND", "COMPILED", "__version__"]
