"""BoolNet-style binary neural network engine.

Two connected halves: a float-domain training graph built on torch
(differentiable surrogates for sign, logic shortcuts and progressive
weight binarization) and a bit-packed numpy inference engine
(XNOR-popcount convolution, boolean shortcuts, BatchNorm fused into
integer thresholds), plus a static cost model for op counts, memory and
energy accounting.
"""

__version__ = "0.1.0"
