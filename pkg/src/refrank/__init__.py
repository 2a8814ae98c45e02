"""Dense text-to-image retrieval with pluggable relevance-feedback strategies."""

__version__ = "0.1.0"
