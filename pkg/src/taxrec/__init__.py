"""Taxonomy-aware latent factor recommender."""

__version__ = "0.1.0"
