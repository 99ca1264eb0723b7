"""waveplane: a desk-scale radiance-field engine whose scene lives as three
feature planes held in a multilevel wavelet domain, trained end to end with
L1 detail sparsity, coarse-to-fine growth, and a refiner-driven
super-resolution loop."""

__version__ = "0.1.0"

from ._kernels import kernel_lane

__all__ = ["kernel_lane", "__version__"]
