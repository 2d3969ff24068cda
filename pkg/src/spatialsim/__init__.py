"""Spatial similarity benchmark: data generators, graph-network classifiers and a small autodiff core."""

__version__ = "0.1.0"
