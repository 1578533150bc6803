"""Orthogonal 2-D wavelet transform and soft thresholding.

The transform is the sparsifying frame of the compressed-sensing
regularizer: a separable multi-level Daubechies decomposition with
periodic boundary handling. Each one-level step along an axis is an
orthogonal matrix, so the full transform is exactly orthogonal and
norm-preserving; the inverse is the transpose applied in reverse.

Complex images are transformed by linearity (the filter matrices are
real), which is equivalent to transforming real and imaginary parts
independently.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_SQRT3 = np.sqrt(3.0)

# 4-tap Daubechies analysis lowpass; highpass is the alternating flip.
_FILTERS = {
    "db2": np.array(
        [1.0 + _SQRT3, 3.0 + _SQRT3, 3.0 - _SQRT3, 1.0 - _SQRT3]
    ) / (4.0 * np.sqrt(2.0)),
    "haar": np.array([1.0, 1.0]) / np.sqrt(2.0),
}

DEFAULT_FAMILY = "db2"
DEFAULT_LEVELS = 4


def _highpass(h):
    g = h[::-1].copy()
    g[1::2] *= -1.0
    return g


@lru_cache(maxsize=None)
def _step_matrix(n, family):
    """Orthogonal one-level analysis matrix for a length-n axis.

    Rows 0..n/2-1 produce approximation coefficients, rows n/2..n-1
    detail coefficients, with periodic wrapping of the filter taps.
    """
    if family not in _FILTERS:
        raise ValueError(f"unknown wavelet family {family!r}")
    h = _FILTERS[family]
    if n % 2 != 0:
        raise ValueError(f"axis length {n} is not even")
    if n < len(h):
        raise ValueError(f"axis length {n} shorter than filter ({len(h)} taps)")
    g = _highpass(h)
    w = np.zeros((n, n))
    half = n // 2
    for k in range(half):
        for m, (hv, gv) in enumerate(zip(h, g)):
            col = (2 * k + m) % n
            w[k, col] += hv
            w[half + k, col] += gv
    return w


@dataclass
class WaveletCoeffs:
    """Multi-level 2-D wavelet coefficients.

    ``approx`` is the coarsest approximation band. ``details`` lists
    one (lh, hl, hh) triple per level, coarsest first. ``shape`` is
    the original image shape before padding.
    """

    approx: np.ndarray
    details: list
    shape: tuple
    padded_shape: tuple
    levels: int
    family: str = DEFAULT_FAMILY

    def detail_l1(self):
        """Sum of detail magnitudes; the approximation band is excluded."""
        total = 0.0
        for bands in self.details:
            for b in bands:
                total += float(np.sum(np.abs(b)))
        return total

    def norm(self):
        """l2 norm over all coefficients including the approximation."""
        total = float(np.sum(np.abs(self.approx) ** 2))
        for bands in self.details:
            for b in bands:
                total += float(np.sum(np.abs(b) ** 2))
        return np.sqrt(total)


def max_levels(shape, family=DEFAULT_FAMILY):
    """Deepest decomposition such that every level keeps at least as
    many samples per axis as the filter has taps (after padding to a
    multiple of 2**levels), and no level subdivides past the original
    axis length."""
    taps = len(_FILTERS[family])
    n = min(shape)
    j = 0
    while 2 ** (j + 1) <= n:
        padded = -(-n // 2 ** (j + 1)) * 2 ** (j + 1)
        if padded // 2**j < taps:
            return j
        j += 1
    return j


def _pad_to_multiple(img, mult):
    ny, nx = img.shape
    py = (-ny) % mult
    px = (-nx) % mult
    if py == 0 and px == 0:
        return img
    return np.pad(img, ((0, py), (0, px)), mode="wrap")


def dwt2(img, levels=DEFAULT_LEVELS, family=DEFAULT_FAMILY):
    """Multi-level separable 2-D wavelet analysis of one image.

    The image is padded periodically to a multiple of 2**levels when
    needed; the original shape is recorded for exact inversion.
    """
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"dwt2 expects a 2-D image, got shape {img.shape}")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if family not in _FILTERS:
        raise ValueError(f"unknown wavelet family {family!r}")
    if levels > max_levels(img.shape, family):
        raise ValueError(
            f"levels={levels} too deep for image of shape {img.shape}; "
            f"at most {max_levels(img.shape, family)} supported"
        )
    work = _pad_to_multiple(img, 2**levels)
    padded_shape = work.shape
    details = []
    cur = work
    for _ in range(levels):
        wy = _step_matrix(cur.shape[0], family)
        wx = _step_matrix(cur.shape[1], family)
        z = wy @ cur @ wx.T
        hy, hx = cur.shape[0] // 2, cur.shape[1] // 2
        ll = z[:hy, :hx]
        lh = z[:hy, hx:]
        hl = z[hy:, :hx]
        hh = z[hy:, hx:]
        details.append((lh, hl, hh))
        cur = ll
    details.reverse()
    return WaveletCoeffs(
        approx=cur,
        details=details,
        shape=img.shape,
        padded_shape=padded_shape,
        levels=levels,
        family=family,
    )


def idwt2(coeffs):
    """Exact inverse of dwt2; returns an image of the original shape."""
    cur = coeffs.approx
    for lh, hl, hh in coeffs.details:
        hy, hx = cur.shape
        if lh.shape != (hy, hx) or hl.shape != (hy, hx) or hh.shape != (hy, hx):
            raise ValueError("detail band shapes are inconsistent")
        z = np.empty(
            (2 * hy, 2 * hx),
            dtype=np.result_type(cur.dtype, lh.dtype),
        )
        z[:hy, :hx] = cur
        z[:hy, hx:] = lh
        z[hy:, :hx] = hl
        z[hy:, hx:] = hh
        wy = _step_matrix(2 * hy, coeffs.family)
        wx = _step_matrix(2 * hx, coeffs.family)
        cur = wy.T @ z @ wx
    ny, nx = coeffs.shape
    return cur[:ny, :nx]


def soft_threshold(coeffs, threshold):
    """Complex soft thresholding of the detail bands.

    Each detail coefficient w maps to w * max(|w| - t, 0) / |w|; the
    approximation band passes through unchanged. Magnitudes never
    increase and the phase of surviving coefficients is preserved.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")

    def shrink(w):
        mag = np.abs(w)
        scale = np.zeros_like(mag)
        nz = mag > 0
        scale[nz] = np.maximum(mag[nz] - threshold, 0.0) / mag[nz]
        return w * scale

    return WaveletCoeffs(
        approx=coeffs.approx.copy(),
        details=[tuple(shrink(b) for b in bands) for bands in coeffs.details],
        shape=coeffs.shape,
        padded_shape=coeffs.padded_shape,
        levels=coeffs.levels,
        family=coeffs.family,
    )
