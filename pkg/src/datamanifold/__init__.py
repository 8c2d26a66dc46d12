"""Distance-based analysis of data manifolds."""

__version__ = "0.1.0"
