"""Autocalibrated coil sensitivity estimation.

Sensitivities are estimated from the fully sampled central k-space
region: local k-space patches of the calibration data are stacked
into a block-Hankel calibration matrix, whose dominant right singular
vectors (the retained kernels) span the space of all consistent
patches. Transformed to the image domain the kernels define, at every
pixel, a small Hermitian matrix whose top eigenvector is the coil
sensitivity vector and whose top eigenvalue is close to one exactly
where the signal model holds. Eigenvalues below the crop threshold
mark pixels outside the object support; their maps are zeroed.

Output maps are sum-of-squares normalized per pixel and phase
referenced so the first coil is real and non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .encoding import SensitivityMaps, ifft2c


class CalibrationError(Exception):
    """Calibration data is missing or cannot support map estimation."""


@dataclass(frozen=True)
class CalibrationConfig:
    kernel_size: tuple = (6, 6)
    nullspace_threshold: float = 0.02
    eigenvalue_crop: float = 0.9

    def __post_init__(self):
        ky, kx = self.kernel_size
        if ky < 1 or kx < 1:
            raise ValueError("kernel size must be positive")
        if not 0 < self.nullspace_threshold < 1:
            raise ValueError("nullspace_threshold must be in (0, 1)")
        if not 0 < self.eigenvalue_crop <= 1:
            raise ValueError("eigenvalue_crop must be in (0, 1]")


def extract_acs(kspace):
    """Central fully sampled calibration block of the first contrast.

    Returns a (coil, acs, acs_x) complex block spanning the mask's
    calibration band in ky and the full extent in kx. Raises
    CalibrationError when the mask declares no calibration band.
    """
    mask = kspace.mask
    if mask.acs_lines < 1:
        raise CalibrationError("no fully sampled central band to calibrate from")
    ny = mask.shape[0]
    start = ny // 2 - mask.acs_lines // 2
    band = slice(start, start + mask.acs_lines)
    # the mask constructor guarantees the band is fully sampled; the
    # first contrast is used for calibration
    return np.ascontiguousarray(kspace.data[0, :, band, :])


def calibration_matrix(acs, kernel_size):
    """Block-Hankel matrix of sliding k-space patches.

    acs: (coil, ny, nx). Rows are patch positions; columns enumerate
    (coil, ky, kx) in C order.
    """
    q, ny, nx = acs.shape
    ky, kx = kernel_size
    if ny < ky or nx < kx:
        raise CalibrationError(
            f"calibration block {ny}x{nx} smaller than kernel {ky}x{kx}"
        )
    win = sliding_window_view(acs, (ky, kx), axis=(1, 2))
    return win.transpose(1, 2, 0, 3, 4).reshape((ny - ky + 1) * (nx - kx + 1), q * ky * kx)


def _image_kernels_accumulate(kernels, grid):
    """Accumulate the per-pixel Gram matrix of image-domain kernels.

    kernels: (n, coil, ky, kx). Returns (y, x, coil, coil) Hermitian.
    Kernels are conjugate-reversed and zero-padded to the grid before
    the centered inverse FFT; processing is per kernel to bound memory.
    """
    n, q, ky, kx = kernels.shape
    ny, nx = grid
    y0 = ny // 2 - ky // 2
    x0 = nx // 2 - kx // 2
    scale = np.sqrt(ny * nx / float(ky * kx))
    gram = np.zeros((ny, nx, q, q), dtype=np.complex128)
    for i in range(n):
        ker = np.conj(kernels[i, :, ::-1, ::-1])
        padded = np.zeros((q, ny, nx), dtype=np.complex128)
        padded[:, y0 : y0 + ky, x0 : x0 + kx] = ker
        g = ifft2c(padded) * scale
        gv = g.transpose(1, 2, 0)
        gram += np.conj(gv)[..., :, None] * gv[..., None, :]
    return gram


def estimate_maps(kspace, config=None):
    """Estimate coil sensitivity maps from sampled k-space.

    Returns SensitivityMaps whose support is the set of pixels with
    top eigenvalue at or above the crop threshold.
    """
    cfg = config or CalibrationConfig()
    acs = extract_acs(kspace)
    q = acs.shape[0]
    ny, nx = kspace.mask.shape

    a = calibration_matrix(acs, cfg.kernel_size)
    _, s, vh = np.linalg.svd(a, full_matrices=False)
    if s[0] == 0:
        raise CalibrationError("calibration block is identically zero")
    keep = s >= cfg.nullspace_threshold * s[0]
    n_keep = int(np.count_nonzero(keep))
    if n_keep < q:
        raise CalibrationError(
            f"degenerate calibration: {n_keep} kernel(s) at threshold "
            f"{cfg.nullspace_threshold}, need at least {q}"
        )
    kernels = vh[keep].reshape(n_keep, q, *cfg.kernel_size)

    gram = _image_kernels_accumulate(kernels, (ny, nx))
    eigvals, eigvecs = np.linalg.eigh(gram)
    top = eigvals[..., -1]
    vec = eigvecs[..., -1]

    # deterministic tie handling: prefer the eigenvector with the
    # larger first-coil magnitude when the top two eigenvalues match
    if q > 1:
        tie = (eigvals[..., -1] - eigvals[..., -2]) <= 1e-9 * np.maximum(top, 1e-30)
        swap = tie & (np.abs(eigvecs[..., 0, -2]) > np.abs(vec[..., 0]))
        vec = np.where(swap[..., None], eigvecs[..., -2], vec)

    support = top >= cfg.eigenvalue_crop

    phase = np.angle(vec[..., 0])
    vec = vec * np.exp(-1j * phase)[..., None]
    norm = np.linalg.norm(vec, axis=-1)
    norm = np.where(norm > 0, norm, 1.0)
    vec = vec / norm[..., None]

    maps = np.where(support[..., None], vec, 0.0).transpose(2, 0, 1)
    return SensitivityMaps(np.ascontiguousarray(maps), support)
