"""Reinforced explainable session recommendation over a knowledge graph."""

__version__ = "0.1.0"
