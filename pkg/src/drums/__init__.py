"""Accelerated cardiac parametric mapping.

Reconstruction of undersampled multi-coil T1/T2 mapping acquisitions:
coil sensitivity calibration, wavelet-regularized parallel-imaging
compressed sensing, low-rank subspace modelling with an optional
learned spatial-basis refiner, and voxelwise relaxometry fitting.
"""

__version__ = "0.1.0"
