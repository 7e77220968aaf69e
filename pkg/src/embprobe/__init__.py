"""Probing toolkit for fixed-dimensional audio embeddings.

Trains lightweight probe networks on trait labels and values, measures
classification/regression performance with resampling-based significance,
and runs distance-based and perturbation-based ablation analyses.
"""

__version__ = "0.1.0"
