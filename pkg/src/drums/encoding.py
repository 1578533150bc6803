"""SENSE encoding: centered Fourier transforms, sampling masks, and
the multi-coil forward/adjoint operator pair.

Conventions used throughout the package:

* image stacks are complex arrays indexed (contrast, y, x)
* k-space is indexed (contrast, coil, ky, kx)
* fft2c/ifft2c act on the last two axes, are unitary (norm="ortho"),
  and keep the DC sample at the array center
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def fft2c(x):
    """Centered orthonormal 2-D FFT over the last two axes."""
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(x, axes=(-2, -1)), norm="ortho"),
        axes=(-2, -1),
    )


def ifft2c(y):
    """Centered orthonormal 2-D inverse FFT over the last two axes."""
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(y, axes=(-2, -1)), norm="ortho"),
        axes=(-2, -1),
    )


def _acs_slice(ny, acs_lines):
    """Index slice of the central fully sampled ky band."""
    start = ny // 2 - acs_lines // 2
    return slice(start, start + acs_lines)


@dataclass(frozen=True)
class SamplingMask:
    """Binary k-space sampling pattern.

    ``mask`` is (ky, kx) when all contrasts share one pattern, or
    (contrast, ky, kx) for per-contrast patterns. A central band of
    ``acs_lines`` fully sampled ky lines is required for calibration.
    """

    mask: np.ndarray
    acceleration: int
    acs_lines: int

    def __post_init__(self):
        m = np.array(self.mask, dtype=np.float64)
        if m.ndim not in (2, 3):
            raise ValueError(f"mask must be 2-D or 3-D, got shape {m.shape}")
        vals = np.unique(m)
        if not np.all(np.isin(vals, (0.0, 1.0))):
            raise ValueError("mask entries must be 0 or 1")
        if self.acceleration < 1:
            raise ValueError("acceleration must be >= 1")
        if self.acs_lines < 0 or self.acs_lines > m.shape[-2]:
            raise ValueError("acs_lines out of range")
        if self.acs_lines > 0:
            band = m[..., _acs_slice(m.shape[-2], self.acs_lines), :]
            if not np.all(band == 1.0):
                raise ValueError("central calibration band is not fully sampled")
        m.flags.writeable = False
        object.__setattr__(self, "mask", m)

    @property
    def per_contrast(self):
        return self.mask.ndim == 3

    @property
    def shape(self):
        return self.mask.shape[-2:]

    def for_contrast(self, t):
        """The 2-D pattern applied to contrast ``t``."""
        return self.mask[t] if self.per_contrast else self.mask

    def expand(self, n_contrasts):
        """Mask broadcast to (contrast, 1, ky, kx) for k-space math."""
        if self.per_contrast:
            if self.mask.shape[0] != n_contrasts:
                raise ValueError(
                    f"mask has {self.mask.shape[0]} contrast patterns, "
                    f"data has {n_contrasts}"
                )
            return self.mask[:, None]
        return np.broadcast_to(self.mask, (n_contrasts,) + self.mask.shape)[:, None]

    def density(self):
        return float(self.mask.mean())


def uniform_mask(ny, nx, acceleration, acs_lines=24, partial_fourier=1.0):
    """Uniform line undersampling: every ``acceleration``-th ky line
    plus the central calibration band.

    ``partial_fourier`` < 1 zeroes the trailing fraction of ky lines
    (outside the calibration band) to mimic a shortened readout.
    """
    if acceleration < 1:
        raise ValueError("acceleration must be >= 1")
    if not 0.5 <= partial_fourier <= 1.0:
        raise ValueError("partial_fourier must be in [0.5, 1]")
    m = np.zeros((ny, nx), dtype=np.float64)
    center = ny // 2
    # lines congruent to the center line, so DC is always sampled
    for ky in range(ny):
        if (ky - center) % acceleration == 0:
            m[ky, :] = 1.0
    if partial_fourier < 1.0:
        keep = int(round(ny * partial_fourier))
        m[keep:, :] = 0.0
    if acs_lines > 0:
        m[_acs_slice(ny, acs_lines), :] = 1.0
    out = SamplingMask(m, acceleration=acceleration, acs_lines=acs_lines)
    if partial_fourier == 1.0:
        # sanity: density may exceed 1/R only by the calibration band
        slack = (acs_lines + acceleration) / ny
        if abs(out.density() - 1.0 / acceleration) > slack:
            raise AssertionError("uniform mask density is inconsistent")
    return out


def pseudorandom_mask(ny, nx, acceleration, n_contrasts, acs_lines=24, seed=0):
    """Per-contrast random ky line selection at a fixed line budget.

    Each contrast samples the calibration band plus a random set of
    outer ky lines chosen so the total line count matches the uniform
    pattern at the same acceleration. Deterministic in ``seed``.
    """
    if n_contrasts < 1:
        raise ValueError("n_contrasts must be >= 1")
    rng = np.random.default_rng(seed)
    template = uniform_mask(ny, nx, acceleration, acs_lines=acs_lines)
    budget = int(template.mask[:, 0].sum())
    acs = _acs_slice(ny, acs_lines)
    outer = np.array([ky for ky in range(ny) if not (acs.start <= ky < acs.stop)])
    n_outer = max(budget - acs_lines, 0)
    m = np.zeros((n_contrasts, ny, nx), dtype=np.float64)
    m[:, acs, :] = 1.0
    for t in range(n_contrasts):
        pick = rng.choice(outer, size=min(n_outer, outer.size), replace=False)
        m[t, pick, :] = 1.0
    return SamplingMask(m, acceleration=acceleration, acs_lines=acs_lines)


@dataclass(frozen=True)
class MultiCoilKSpace:
    """Sampled multi-coil k-space with its sampling pattern.

    ``data`` is (contrast, coil, ky, kx) complex; entries outside the
    mask are zero.
    """

    data: np.ndarray
    mask: SamplingMask

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 4:
            raise ValueError(f"k-space must be 4-D (t, q, ky, kx), got {d.shape}")
        if not np.iscomplexobj(d):
            raise ValueError("k-space must be complex")
        if d.shape[-2:] != self.mask.shape:
            raise ValueError(
                f"k-space grid {d.shape[-2:]} does not match mask {self.mask.shape}"
            )
        if self.mask.per_contrast and self.mask.mask.shape[0] != d.shape[0]:
            raise ValueError("per-contrast mask count does not match data")
        object.__setattr__(self, "data", d)

    @property
    def n_contrasts(self):
        return self.data.shape[0]

    @property
    def n_coils(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class SensitivityMaps:
    """Complex coil sensitivity maps (coil, y, x) with a support mask.

    On support the maps are sum-of-squares normalized,
    sum_q |S_q(r)|^2 = 1; off support they are zero.
    """

    maps: np.ndarray
    support: np.ndarray = None

    def __post_init__(self):
        m = np.asarray(self.maps)
        if m.ndim != 3:
            raise ValueError(f"maps must be 3-D (coil, y, x), got {m.shape}")
        if not np.iscomplexobj(m):
            raise ValueError("maps must be complex")
        if self.support is None:
            sup = np.sum(np.abs(m) ** 2, axis=0) > 0
        else:
            sup = np.asarray(self.support, dtype=bool)
            if sup.shape != m.shape[1:]:
                raise ValueError("support shape does not match maps")
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "maps", m)

    @property
    def n_coils(self):
        return self.maps.shape[0]

    @property
    def shape(self):
        return self.maps.shape[1:]

    def validate(self, tol=1e-3):
        """Check SOS normalization on support and zeros off support."""
        sos = np.sum(np.abs(self.maps) ** 2, axis=0)
        if self.support.any() and np.max(np.abs(sos[self.support] - 1.0)) > tol:
            raise ValueError("maps are not sum-of-squares normalized on support")
        if (~self.support).any() and np.max(sos[~self.support]) > tol:
            raise ValueError("maps are non-zero off support")


def _check_geometry(x_shape, maps, mask):
    if x_shape[-2:] != maps.shape:
        raise ValueError(f"image grid {x_shape[-2:]} does not match maps {maps.shape}")
    if x_shape[-2:] != mask.shape:
        raise ValueError(f"image grid {x_shape[-2:]} does not match mask {mask.shape}")


def sense_forward(x, maps, mask):
    """Apply the SENSE encoding operator.

    x: (contrast, y, x) complex image stack.
    Returns MultiCoilKSpace with data (contrast, coil, ky, kx):
    mask * fft2c(S_q * x_t).
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"image stack must be 3-D (t, y, x), got {x.shape}")
    _check_geometry(x.shape, maps, mask)
    coil_images = maps.maps[None, :, :, :] * x[:, None, :, :]
    y = fft2c(coil_images) * mask.expand(x.shape[0])
    return MultiCoilKSpace(y, mask)


def sense_adjoint(y, maps):
    """Apply the adjoint of the SENSE encoding operator.

    Returns the (contrast, y, x) image stack
    sum_q conj(S_q) * ifft2c(mask * y_q).
    """
    if maps.shape != y.mask.shape:
        raise ValueError(f"maps grid {maps.shape} does not match mask {y.mask.shape}")
    ksp = y.data * y.mask.expand(y.n_contrasts)
    coil_images = ifft2c(ksp)
    return np.sum(np.conj(maps.maps)[None] * coil_images, axis=1)


def max_eigenvalue(maps, mask, n_contrasts=1, iterations=30, seed=0):
    """Largest eigenvalue of the SENSE normal operator E^H E.

    Estimated by power iteration from a seeded random start; returns
    the final Rayleigh quotient. The quotient is non-decreasing in the
    iteration count for this Hermitian positive semi-definite operator.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = np.random.default_rng(seed)
    shape = (n_contrasts,) + maps.shape
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    lam = 0.0
    for _ in range(iterations):
        nv = np.linalg.norm(v)
        if nv == 0:
            return 0.0
        v = v / nv
        w = sense_adjoint(sense_forward(v, maps, mask), maps)
        lam = float(np.real(np.vdot(v, w)))
        v = w
    return lam
