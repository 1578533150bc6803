"""Image quality metrics for reconstruction and map comparison.

All metrics compare a test image against a reference on an optional
region of interest. Complex inputs are reduced to magnitudes first.
Error metrics are computed in float64.

* nrmse: ||test - ref|| / ||ref||, the reported reconstruction error
* nmse: squared nrmse
* psnr: 10 log10(max(ref)^2 / mse), infinite for identical images
* ssim: mean local structural similarity over a sliding window, with
  the constants derived from the joint dynamic range of both images
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MetricReport:
    """One metric evaluated on one test/reference pair."""

    metric: str
    value: float
    test_id: str = ""
    reference_id: str = ""
    roi: str = "full"
    extra: dict = field(default_factory=dict)


def _as_magnitude(arr):
    arr = np.asarray(arr)
    if np.iscomplexobj(arr):
        arr = np.abs(arr)
    return arr.astype(np.float64)


def _check_pair(test, ref, roi):
    if test.shape != ref.shape:
        raise ValueError(f"shape mismatch: test {test.shape}, reference {ref.shape}")
    if roi is not None:
        roi = np.asarray(roi, dtype=bool)
        if roi.shape != ref.shape:
            raise ValueError(f"roi shape {roi.shape} does not match images {ref.shape}")
        if not roi.any():
            raise ValueError("roi is empty")
    return roi


def nrmse(test, ref, roi=None):
    """Normalized root mean square error, ||t - r||_2 / ||r||_2."""
    t = _as_magnitude(test)
    r = _as_magnitude(ref)
    roi = _check_pair(t, r, roi)
    if roi is not None:
        t, r = t[roi], r[roi]
    denom = np.linalg.norm(r)
    if denom == 0:
        raise ValueError("reference is identically zero on the roi")
    return float(np.linalg.norm(t - r) / denom)


def nmse(test, ref, roi=None):
    """Normalized mean square error; the square of nrmse."""
    return nrmse(test, ref, roi) ** 2


def psnr(test, ref, roi=None):
    """Peak signal-to-noise ratio in dB against the reference peak."""
    t = _as_magnitude(test)
    r = _as_magnitude(ref)
    roi = _check_pair(t, r, roi)
    if roi is not None:
        t, r = t[roi], r[roi]
    peak = float(r.max())
    if peak == 0:
        raise ValueError("reference is identically zero on the roi")
    mse = float(np.mean((t - r) ** 2))
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / mse))


def ssim(test, ref, roi=None, window=SSIM_WINDOW):
    """Mean structural similarity over sliding windows.

    Uniform window, population statistics. Only windows lying entirely
    inside both the image and the roi contribute. The stabilization
    constants are C1 = (K1 D)^2, C2 = (K2 D)^2 with D the joint
    min-to-max dynamic range of the two images on the roi.
    """
    t = _as_magnitude(test)
    r = _as_magnitude(ref)
    if t.ndim != 2:
        raise ValueError(f"ssim expects 2-D images, got shape {t.shape}")
    roi = _check_pair(t, r, roi)
    if window < 2 or window > min(t.shape):
        raise ValueError(f"window {window} invalid for image of shape {t.shape}")

    if roi is not None:
        sel = roi
    else:
        sel = np.ones(t.shape, dtype=bool)

    lo = min(t[sel].min(), r[sel].min())
    hi = max(t[sel].max(), r[sel].max())
    d = hi - lo
    if d == 0:
        # flat images: identical means similarity one
        return 1.0 if np.array_equal(t[sel], r[sel]) else 0.0
    c1 = (SSIM_K1 * d) ** 2
    c2 = (SSIM_K2 * d) ** 2

    tw = sliding_window_view(t, (window, window))
    rw = sliding_window_view(r, (window, window))
    inside = sliding_window_view(sel, (window, window)).all(axis=(2, 3))
    if not inside.any():
        raise ValueError("no sliding window fits inside the roi")

    mu_t = tw.mean(axis=(2, 3))
    mu_r = rw.mean(axis=(2, 3))
    var_t = tw.var(axis=(2, 3))
    var_r = rw.var(axis=(2, 3))
    cov = (tw * rw).mean(axis=(2, 3)) - mu_t * mu_r

    num = (2 * mu_t * mu_r + c1) * (2 * cov + c2)
    den = (mu_t**2 + mu_r**2 + c1) * (var_t + var_r + c2)
    local = num / den
    return float(local[inside].mean())
