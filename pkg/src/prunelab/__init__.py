"""Structured-pruning laboratory.

A minimal deterministic CNN training engine (im2col convolution, explicit
backprop), filter-wise / shape-wise weight grouping, an escalating
per-group regularization scheduler with physical model compaction and
speedup benchmarking, and a numerical verifier for the 1-D
regularization-path shrinkage result.

Heavy submodules are imported lazily so the CLI can pin BLAS thread counts
before numpy loads.
"""

__version__ = "0.1.0"
