"""Training loss: structural similarity plus mean absolute error.

The SSIM term matches the evaluation-side definition: uniform square
windows fully inside the image, population moments, and a dynamic
range taken jointly over both images. It is computed per channel and
averaged. The total loss is 1 - SSIM(out, target) + L1(out, target).
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

RANGE_FLOOR = 1e-8


def ssim(x, y, window=5):
    """Mean SSIM of (batch, channel, h, w) tensors, uniform windows.

    The dynamic range is evaluated per (sample, channel) pair over
    both images jointly and detached, so gradients flow through the
    window statistics only.
    """
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.shape[-2] < window or x.shape[-1] < window:
        raise ValueError("images are smaller than the window")
    b, c = x.shape[0], x.shape[1]
    flat_x = x.reshape(b, c, -1)
    flat_y = y.reshape(b, c, -1)
    hi = torch.maximum(flat_x.amax(dim=2), flat_y.amax(dim=2))
    lo = torch.minimum(flat_x.amin(dim=2), flat_y.amin(dim=2))
    d = (hi - lo).detach().clamp(min=RANGE_FLOOR)[:, :, None, None]
    c1 = (0.01 * d) ** 2
    c2 = (0.03 * d) ** 2

    mu_x = F.avg_pool2d(x, window, stride=1)
    mu_y = F.avg_pool2d(y, window, stride=1)
    var_x = (F.avg_pool2d(x * x, window, stride=1) - mu_x**2).clamp(min=0.0)
    var_y = (F.avg_pool2d(y * y, window, stride=1) - mu_y**2).clamp(min=0.0)
    cov = F.avg_pool2d(x * y, window, stride=1) - mu_x * mu_y

    score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    return score.mean()


def reconstruction_loss(out, target, window=5):
    """1 - SSIM plus mean absolute error."""
    return 1.0 - ssim(out, target, window) + (out - target).abs().mean()
