"""Optimization loop and loss-curve logging."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import torch

from .losses import reconstruction_loss
from .model import ArchDescriptor, RefinerNet


class DivergenceError(Exception):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainingConfig:
    """Optimization settings.

    ``epochs`` defaults to the full-scale setting; desk-scale runs
    pass 50. The remaining defaults are the published ones: adaptive
    moments at 1e-3, batches of 16, dropout 0.5, SSIM window 5.
    """

    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 500
    dropout: float = 0.5
    ssim_window: int = 5
    levels: int = 2
    base_filters: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.ssim_window < 2:
            raise ValueError("ssim_window must be >= 2")


def _epoch_batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _mean_loss(model, x, y, batch_size, window):
    model.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, x.shape[0], batch_size):
            xb = x[start : start + batch_size]
            yb = y[start : start + batch_size]
            total += float(reconstruction_loss(model(xb), yb, window)) * xb.shape[0]
    return total / x.shape[0]


def train(inputs, targets, val_inputs, val_targets, cfg):
    """Fit the network; returns (model, history).

    ``inputs``/``targets`` are (n, c, h, w) float32 arrays in the same
    z-score frame. History is one dict per epoch with mean train and
    validation loss. Raises DivergenceError on a non-finite loss.
    """
    if inputs.shape != targets.shape or inputs.ndim != 4:
        raise ValueError("inputs and targets must be matching (n, c, h, w)")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    arch = ArchDescriptor(
        levels=cfg.levels,
        base_filters=cfg.base_filters,
        in_channels=inputs.shape[1],
        out_channels=targets.shape[1],
        dropout=cfg.dropout,
    )
    model = RefinerNet(arch)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)

    x = torch.from_numpy(np.ascontiguousarray(inputs))
    y = torch.from_numpy(np.ascontiguousarray(targets))
    xv = torch.from_numpy(np.ascontiguousarray(val_inputs))
    yv = torch.from_numpy(np.ascontiguousarray(val_targets))

    history = []
    for epoch in range(cfg.epochs):
        model.train()
        running = 0.0
        for batch in _epoch_batches(x.shape[0], cfg.batch_size, rng):
            idx = torch.from_numpy(batch)
            opt.zero_grad()
            loss = reconstruction_loss(model(x[idx]), y[idx], cfg.ssim_window)
            if not torch.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch of {len(batch)}: {loss}"
                )
            loss.backward()
            opt.step()
            running += float(loss.detach()) * len(batch)
        row = {
            "epoch": epoch,
            "train_loss": running / x.shape[0],
            "val_loss": _mean_loss(model, xv, yv, cfg.batch_size, cfg.ssim_window),
        }
        history.append(row)
    model.eval()
    return model, history


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss"])
        writer.writeheader()
        for row in history:
            writer.writerow(row)
