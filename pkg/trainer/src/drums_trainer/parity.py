"""Forward-pass dumps for cross-implementation parity checks.

A dump archive freezes one full inference: the input tensor, every
named intermediate activation, and the output, all float32. The
inference side replays the input through its own engine and compares.
Dumps are computed in float64 so the recorded values carry no
accumulation-order noise of their own.
"""

from __future__ import annotations

import numpy as np
import torch

from .archive import write_tensors
from .model import load_model


def dump_parity(weights_path, seed, out_path, grid=128):
    """Run the archived network on a seeded random input and record
    input, per-stage activations, and output. Returns the entry names.
    """
    model = load_model(weights_path).double()
    div = 2**model.arch.levels
    if grid % div:
        raise ValueError(f"grid must be divisible by {div}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((model.arch.in_channels, grid, grid)).astype(np.float32)
    taps = {}
    with torch.no_grad():
        model(torch.from_numpy(x).double().unsqueeze(0), taps=taps)
    entries = {"input": x}
    for name, value in taps.items():
        entries[name] = value.squeeze(0).numpy().astype(np.float32)
    write_tensors(out_path, entries)
    return list(entries)
