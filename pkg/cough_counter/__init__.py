"""Cough Counter Package.

This package detects cough events in ambulatory audio recordings with a
cascade of two small neural networks over per-frame acoustic features.
It includes the signal-processing pipeline, training, evaluation and a CLI.
"""

__version__ = '0.1.0'
