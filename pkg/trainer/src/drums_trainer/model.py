"""The refinement U-Net as a trainable module, plus weight-archive
export/import in the shared naming grammar.

Grammar (one archive entry per tensor, plus the ``arch`` descriptor):

    enc{i}.conv1 enc{i}.bn1 enc{i}.conv2 enc{i}.bn2    i = 0..levels-1
    bott.conv1 bott.bn1 bott.conv2 bott.bn2
    dec{i}.up dec{i}.conv1 dec{i}.bn1 dec{i}.conv2 dec{i}.bn2
    head.conv

Suffixes: ``.weight``/``.bias`` for convolutions, and
``.gamma``/``.beta``/``.mean``/``.var`` for batch normalization, the
latter two being the running statistics used at inference.
Convolution weights are (out, in, kh, kw); transpose convolutions are
(in, out, 2, 2) — both are the native layouts here, so export is a
straight copy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .archive import ArchiveFormatError, read_tensors, write_tensors

BN_EPS = 1e-5
ARCH_VERSION = 1


@dataclass(frozen=True)
class ArchDescriptor:
    levels: int = 4
    base_filters: int = 64
    in_channels: int = 6
    out_channels: int = 6
    dropout: float = 0.5

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.base_filters < 1:
            raise ValueError("base_filters must be >= 1")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")

    def entry(self):
        return np.array(
            [
                ARCH_VERSION,
                self.levels,
                self.base_filters,
                self.in_channels,
                self.out_channels,
                self.dropout,
            ],
            dtype=np.float32,
        )

    @staticmethod
    def from_entry(arr):
        arr = np.asarray(arr).ravel()
        if arr.size != 6:
            raise ArchiveFormatError(f"arch entry must have 6 values, got {arr.size}")
        if int(arr[0]) != ARCH_VERSION:
            raise ArchiveFormatError(f"unknown architecture version {int(arr[0])}")
        return ArchDescriptor(
            levels=int(arr[1]),
            base_filters=int(arr[2]),
            in_channels=int(arr[3]),
            out_channels=int(arr[4]),
            dropout=float(arr[5]),
        )


class _DoubleConv(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(c_out, eps=BN_EPS)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(c_out, eps=BN_EPS)

    def forward(self, x):
        x = torch.relu(self.bn1(self.conv1(x)))
        return torch.relu(self.bn2(self.conv2(x)))


class RefinerNet(nn.Module):
    """U-Net over (batch, channels, h, w); h, w divisible by 2**levels.

    Per encoder stage: double conv then 2x2 max pooling, channel count
    doubling from ``base_filters``. The bottleneck carries dropout
    (training only). Per decoder stage: 2x2 transpose convolution,
    concatenation with the matching encoder output (skip first,
    upsampled second), double conv. A 1x1 head maps to out_channels.
    """

    def __init__(self, arch):
        super().__init__()
        self.arch = arch
        self.enc = nn.ModuleList()
        c_prev = arch.in_channels
        for i in range(arch.levels):
            c = arch.base_filters * 2**i
            self.enc.append(_DoubleConv(c_prev, c))
            c_prev = c
        self.bott = _DoubleConv(c_prev, arch.base_filters * 2**arch.levels)
        self.drop = nn.Dropout2d(arch.dropout)
        c_prev = arch.base_filters * 2**arch.levels
        self.up = nn.ModuleDict()
        self.dec = nn.ModuleDict()
        for i in reversed(range(arch.levels)):
            c = arch.base_filters * 2**i
            self.up[str(i)] = nn.ConvTranspose2d(c_prev, c, 2, stride=2)
            self.dec[str(i)] = _DoubleConv(2 * c, c)
            c_prev = c
        self.head = nn.Conv2d(c_prev, arch.out_channels, 1)

    def forward(self, x, taps=None):
        div = 2**self.arch.levels
        if x.shape[-2] % div or x.shape[-1] % div:
            raise ValueError(f"spatial dims must be divisible by {div}")
        skips = []
        for i, stage in enumerate(self.enc):
            x = stage(x)
            if taps is not None:
                taps[f"enc{i}"] = x
            skips.append(x)
            x = torch.max_pool2d(x, 2)
        x = self.drop(self.bott(x))
        if taps is not None:
            taps["bott"] = x
        for i in reversed(range(self.arch.levels)):
            x = self.up[str(i)](x)
            x = torch.cat([skips[i], x], dim=1)
            x = self.dec[str(i)](x)
            if taps is not None:
                taps[f"dec{i}"] = x
        out = self.head(x)
        if taps is not None:
            taps["out"] = out
        return out

    def parameter_total(self):
        """Learnable tensors only; running statistics are buffers."""
        return sum(p.numel() for p in self.parameters())


def _grammar_modules(model):
    """Yield (archive base name, module) pairs in a stable order."""
    for i, stage in enumerate(model.enc):
        yield f"enc{i}.conv1", stage.conv1
        yield f"enc{i}.bn1", stage.bn1
        yield f"enc{i}.conv2", stage.conv2
        yield f"enc{i}.bn2", stage.bn2
    yield "bott.conv1", model.bott.conv1
    yield "bott.bn1", model.bott.bn1
    yield "bott.conv2", model.bott.conv2
    yield "bott.bn2", model.bott.bn2
    for i in reversed(range(model.arch.levels)):
        yield f"dec{i}.up", model.up[str(i)]
        yield f"dec{i}.conv1", model.dec[str(i)].conv1
        yield f"dec{i}.bn1", model.dec[str(i)].bn1
        yield f"dec{i}.conv2", model.dec[str(i)].conv2
        yield f"dec{i}.bn2", model.dec[str(i)].bn2
    yield "head.conv", model.head


def _module_entries(base, mod):
    if isinstance(mod, nn.BatchNorm2d):
        return {
            f"{base}.gamma": mod.weight.detach(),
            f"{base}.beta": mod.bias.detach(),
            f"{base}.mean": mod.running_mean.detach(),
            f"{base}.var": mod.running_var.detach(),
        }
    return {
        f"{base}.weight": mod.weight.detach(),
        f"{base}.bias": mod.bias.detach(),
    }


def export_weights(model, path):
    """Write the model to a weight archive; returns the tensor count
    written (descriptor excluded).
    """
    entries = {"arch": model.arch.entry()}
    for base, mod in _grammar_modules(model):
        for name, value in _module_entries(base, mod).items():
            entries[name] = value.cpu().numpy().astype(np.float32)
    write_tensors(path, entries)
    return len(entries) - 1


def _bn_targets(mod):
    return {
        "gamma": mod.weight,
        "beta": mod.bias,
        "mean": mod.running_mean,
        "var": mod.running_var,
    }


def load_model(path):
    """Rebuild a RefinerNet from a weight archive, in eval mode."""
    entries = read_tensors(path)
    if "arch" not in entries:
        raise ArchiveFormatError(f"{path}: no architecture descriptor")
    arch = ArchDescriptor.from_entry(entries.pop("arch"))
    model = RefinerNet(arch)
    with torch.no_grad():
        for base, mod in _grammar_modules(model):
            if isinstance(mod, nn.BatchNorm2d):
                targets = {f"{base}.{k}": v for k, v in _bn_targets(mod).items()}
            else:
                targets = {f"{base}.weight": mod.weight, f"{base}.bias": mod.bias}
            for name, param in targets.items():
                if name not in entries:
                    raise ArchiveFormatError(f"{path}: missing tensor {name!r}")
                value = entries.pop(name)
                if tuple(value.shape) != tuple(param.shape):
                    raise ArchiveFormatError(
                        f"{path}: tensor {name!r} has shape {tuple(value.shape)}, "
                        f"expected {tuple(param.shape)}"
                    )
                param.copy_(torch.from_numpy(value))
    if entries:
        raise ArchiveFormatError(f"{path}: unexpected tensors {sorted(entries)}")
    model.eval()
    return model


def identity_entries(arch):
    """Weight-archive entries for an exact pass-through network.

    Each input channel rides through the top encoder and decoder
    stages as a (+x, -x) channel pair; relu(x) - relu(-x) == x, so the
    pairing survives the nonlinearity. Batch norm is neutralized with
    var = 1 - eps, deeper stages are zero, and the 1x1 head recombines
    each pair. Needs base_filters >= 2 * in_channels and equal in/out
    channel counts.
    """
    if arch.base_filters < 2 * arch.in_channels:
        raise ValueError("identity construction needs base_filters >= 2*in_channels")
    if arch.out_channels != arch.in_channels:
        raise ValueError("identity construction needs out_channels == in_channels")
    model = RefinerNet(arch)
    entries = {"arch": arch.entry()}
    for base, mod in _grammar_modules(model):
        for name, value in _module_entries(base, mod).items():
            shape = tuple(value.shape)
            if name.endswith(".gamma"):
                entries[name] = np.ones(shape, dtype=np.float32)
            elif name.endswith(".var"):
                entries[name] = np.full(shape, 1.0 - BN_EPS, dtype=np.float32)
            else:
                entries[name] = np.zeros(shape, dtype=np.float32)

    n = arch.in_channels
    w = entries["enc0.conv1.weight"]
    for c in range(n):
        w[2 * c, c, 1, 1] = 1.0
        w[2 * c + 1, c, 1, 1] = -1.0

    def pair_carry(name, k):
        wt = entries[name]
        mid = k // 2
        for c in range(n):
            wt[2 * c, 2 * c, mid, mid] = 1.0
            wt[2 * c, 2 * c + 1, mid, mid] = -1.0
            wt[2 * c + 1, 2 * c, mid, mid] = -1.0
            wt[2 * c + 1, 2 * c + 1, mid, mid] = 1.0

    pair_carry("enc0.conv2.weight", 3)
    pair_carry("dec0.conv1.weight", 3)
    pair_carry("dec0.conv2.weight", 3)
    w = entries["head.conv.weight"]
    for c in range(n):
        w[c, 2 * c, 0, 0] = 1.0
        w[c, 2 * c + 1, 0, 0] = -1.0
    return entries


def export_identity(arch, path):
    write_tensors(path, identity_entries(arch))
