"""stabmor: stability-preserving Galerkin projection model order reduction."""

from .config import DEFAULT, Tolerances

__version__ = "0.1.0"

__all__ = ["DEFAULT", "Tolerances", "__version__"]
