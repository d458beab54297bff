"""Few-shot classification with semantically proportional patch mixing."""

__version__ = "0.1.0"
