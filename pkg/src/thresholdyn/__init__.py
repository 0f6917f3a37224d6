"""Threshold-dynamics toolkit: simulate convolution-threshold front evolution
and recover the kernel/threshold that generated an observed video."""

__version__ = "0.1.0"
