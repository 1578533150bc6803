"""Loss terms against a plain sliding-window reimplementation."""

import numpy as np
import pytest
import torch

from drums_trainer.losses import RANGE_FLOOR, reconstruction_loss, ssim


def naive_ssim(x, y, window):
    """Straight loops over every valid window, joint per-image range."""
    scores = []
    for b in range(x.shape[0]):
        for c in range(x.shape[1]):
            xi = x[b, c]
            yi = y[b, c]
            lo = min(xi.min(), yi.min())
            hi = max(xi.max(), yi.max())
            d = max(hi - lo, RANGE_FLOOR)
            c1 = (0.01 * d) ** 2
            c2 = (0.03 * d) ** 2
            for i in range(xi.shape[0] - window + 1):
                for j in range(xi.shape[1] - window + 1):
                    wx = xi[i : i + window, j : j + window]
                    wy = yi[i : i + window, j : j + window]
                    mx = wx.mean()
                    my = wy.mean()
                    vx = max((wx * wx).mean() - mx * mx, 0.0)
                    vy = max((wy * wy).mean() - my * my, 0.0)
                    cov = (wx * wy).mean() - mx * my
                    scores.append(
                        ((2 * mx * my + c1) * (2 * cov + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2))
                    )
    return float(np.mean(scores))


def naive_loss(x, y, window):
    return 1.0 - naive_ssim(x, y, window) + float(np.mean(np.abs(x - y)))


class TestAgainstNaive:
    def test_random_pairs(self):
        rng = np.random.default_rng(0)
        for trial in range(5):
            x = rng.standard_normal((2, 3, 12, 12))
            y = x + 0.3 * rng.standard_normal(x.shape)
            got = float(reconstruction_loss(
                torch.from_numpy(x), torch.from_numpy(y), window=5))
            assert got == pytest.approx(naive_loss(x, y, 5), abs=1e-5)

    def test_zero_output(self):
        # collapsing to zeros must cost exactly 1 - ssim(0, y) + mean|y|
        rng = np.random.default_rng(1)
        y = rng.standard_normal((1, 2, 10, 10))
        x = np.zeros_like(y)
        got = float(reconstruction_loss(
            torch.from_numpy(x), torch.from_numpy(y), window=5))
        assert got == pytest.approx(naive_loss(x, y, 5), abs=1e-5)

    def test_other_window(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 1, 9, 9))
        y = rng.standard_normal((1, 1, 9, 9))
        got = float(reconstruction_loss(
            torch.from_numpy(x), torch.from_numpy(y), window=3))
        assert got == pytest.approx(naive_loss(x, y, 3), abs=1e-5)


class TestEdges:
    def test_identical_images_score_one(self):
        rng = np.random.default_rng(3)
        x = torch.from_numpy(rng.standard_normal((2, 2, 8, 8)))
        assert float(ssim(x, x)) == pytest.approx(1.0, abs=1e-12)
        assert float(reconstruction_loss(x, x)) == pytest.approx(0.0, abs=1e-12)

    def test_flat_images(self):
        x = torch.zeros(1, 1, 8, 8)
        assert float(reconstruction_loss(x, x)) == pytest.approx(0.0, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ssim(torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 8, 9))

    def test_window_too_large(self):
        with pytest.raises(ValueError):
            ssim(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 4), window=5)

    def test_gradient_flows(self):
        torch.manual_seed(0)
        x = torch.randn(1, 1, 8, 8, requires_grad=True)
        y = torch.randn(1, 1, 8, 8)
        loss = reconstruction_loss(x, y)
        loss.backward()
        assert torch.isfinite(x.grad).all()
        assert float(x.grad.abs().sum()) > 0
