"""Two-scale finite elements for homogenized bending of microstructured plates."""

from homoplate.errors import InvalidParameter, NumericalFailure

__version__ = "0.1.0"

__all__ = ["InvalidParameter", "NumericalFailure", "__version__"]
