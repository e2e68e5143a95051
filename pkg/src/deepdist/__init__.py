"""Distance-based phylogeny reconstruction with exponential distance averaging."""

__version__ = "0.1.0"
