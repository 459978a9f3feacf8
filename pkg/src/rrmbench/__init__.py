"""Benchmark suite for radio resource management in non-stationary fading channels.

Subpackages cover channel simulation, dataset generation, classical
allocators, from-scratch neural network training, deep Q-learning, the
two-stage predictor pipeline, and the experiment drivers that emit CSV
results.
"""

__version__ = "0.1.0"
