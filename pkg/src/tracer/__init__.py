"""Intervention-based causal analysis of small neural classifiers."""

__version__ = "0.1.0"
