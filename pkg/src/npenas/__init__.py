"""Predictor-guided evolutionary neural architecture search on tabular cell spaces."""

__version__ = "0.1.0"
