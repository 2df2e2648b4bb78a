"""Octave convolution kernels, oracles, cost models and diagnostics."""
