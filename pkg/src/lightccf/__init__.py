"""Contrastive collaborative filtering with neighborhood-aggregation objectives."""

__version__ = "0.1.0"
