"""Learned spatial-basis refinement network: inference engine and
weight-archive handling.

The network is a 2-D U-Net operating on the prepared-basis tensor
(2L channels, 128 x 128). Architecture, fixed by the descriptor:

* ``levels`` encoder stages; stage i has 2^i * base_filters filters,
  each stage is [conv3x3 -> batchnorm -> relu] x 2 followed by 2x2
  max pooling
* a bottleneck of the same double-conv shape with 2^levels * base
  filters (dropout sits here during training; inference is identity)
* ``levels`` decoder stages: 2x2 transpose convolution halving the
  filter count, concatenation with the matching encoder output
  (skip first, upsampled second), then the double conv
* a final 1x1 convolution to ``out_channels``

Convolutions use zero padding ("same"), stride 1. Batchnorm applies
stored running statistics: gamma * (x - mean) / sqrt(var + 1e-5) + beta.
Dot products accumulate in float64 and results are stored as float32,
so the forward pass is deterministic across runs on the same machine.

Weight archives are DRUMTNSR files with one entry per parameter plus
an ``arch`` descriptor entry. Names follow the grammar

    enc{i}.conv1 enc{i}.bn1 enc{i}.conv2 enc{i}.bn2   i = 0..levels-1
    bott.conv1 bott.bn1 bott.conv2 bott.bn2
    dec{i}.up dec{i}.conv1 dec{i}.bn1 dec{i}.conv2 dec{i}.bn2
    head.conv

with suffixes ``.weight``/``.bias`` for (transpose) convolutions and
``.gamma``/``.beta``/``.mean``/``.var`` for batchnorm. Convolution
weights are (out, in, kh, kw); transpose convolution weights are
(in, out, 2, 2).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .tensor_io import Tensor, read_archive, write_archive

BN_EPS = 1e-5
ARCH_VERSION = 1


class WeightFormatError(Exception):
    """Weight archive does not match the declared architecture."""


@dataclass(frozen=True)
class ArchSpec:
    """U-Net shape descriptor stored alongside the weights."""

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

    def to_entry(self):
        return Tensor(
            "arch",
            np.array(
                [
                    ARCH_VERSION,
                    self.levels,
                    self.base_filters,
                    self.in_channels,
                    self.out_channels,
                    self.dropout,
                ],
                dtype=np.float32,
            ),
        )

    @staticmethod
    def from_entry(arr):
        arr = np.asarray(arr).ravel()
        if arr.size != 6:
            raise WeightFormatError(f"arch entry must have 6 values, got {arr.size}")
        if int(arr[0]) != ARCH_VERSION:
            raise WeightFormatError(
                f"unknown architecture version {int(arr[0])}, expected {ARCH_VERSION}"
            )
        return ArchSpec(
            levels=int(arr[1]),
            base_filters=int(arr[2]),
            in_channels=int(arr[3]),
            out_channels=int(arr[4]),
            dropout=float(arr[5]),
        )


def _conv_shapes(name, c_in, c_out, k):
    return {
        f"{name}.weight": (c_out, c_in, k, k),
        f"{name}.bias": (c_out,),
    }


def _tconv_shapes(name, c_in, c_out):
    return {
        f"{name}.weight": (c_in, c_out, 2, 2),
        f"{name}.bias": (c_out,),
    }


def _bn_shapes(name, c):
    return {
        f"{name}.gamma": (c,),
        f"{name}.beta": (c,),
        f"{name}.mean": (c,),
        f"{name}.var": (c,),
    }


def expected_layout(arch):
    """name -> shape for every tensor a weight archive must contain."""
    layout = {}
    c_prev = arch.in_channels
    for i in range(arch.levels):
        c = arch.base_filters * 2**i
        layout.update(_conv_shapes(f"enc{i}.conv1", c_prev, c, 3))
        layout.update(_bn_shapes(f"enc{i}.bn1", c))
        layout.update(_conv_shapes(f"enc{i}.conv2", c, c, 3))
        layout.update(_bn_shapes(f"enc{i}.bn2", c))
        c_prev = c
    c = arch.base_filters * 2**arch.levels
    layout.update(_conv_shapes("bott.conv1", c_prev, c, 3))
    layout.update(_bn_shapes("bott.bn1", c))
    layout.update(_conv_shapes("bott.conv2", c, c, 3))
    layout.update(_bn_shapes("bott.bn2", c))
    c_prev = c
    for i in reversed(range(arch.levels)):
        c = arch.base_filters * 2**i
        layout.update(_tconv_shapes(f"dec{i}.up", c_prev, c))
        layout.update(_conv_shapes(f"dec{i}.conv1", 2 * c, c, 3))
        layout.update(_bn_shapes(f"dec{i}.bn1", c))
        layout.update(_conv_shapes(f"dec{i}.conv2", c, c, 3))
        layout.update(_bn_shapes(f"dec{i}.bn2", c))
        c_prev = c
    layout.update(_conv_shapes("head.conv", c_prev, arch.out_channels, 1))
    return layout


def parameter_count(arch):
    """Learnable parameters: convolution weights and biases plus
    batchnorm scale and shift. Running statistics are buffers, not
    parameters, and are excluded.
    """
    total = 0
    for name, shape in expected_layout(arch).items():
        if name.endswith((".mean", ".var")):
            continue
        total += int(np.prod(shape))
    return total


@dataclass
class NetworkWeights:
    arch: ArchSpec
    tensors: dict

    def __post_init__(self):
        layout = expected_layout(self.arch)
        for name, shape in layout.items():
            if name not in self.tensors:
                raise WeightFormatError(f"missing weight tensor {name!r}")
            got = self.tensors[name].shape
            if tuple(got) != shape:
                raise WeightFormatError(
                    f"tensor {name!r} has shape {tuple(got)}, expected {shape}"
                )
        extra = set(self.tensors) - set(layout)
        if extra:
            raise WeightFormatError(f"unexpected tensors: {sorted(extra)}")

    def __getitem__(self, name):
        return self.tensors[name]

    @property
    def parameter_count(self):
        return parameter_count(self.arch)


def save_weights(path, weights):
    entries = [weights.arch.to_entry()]
    for name in sorted(weights.tensors):
        entries.append(Tensor(name, np.asarray(weights.tensors[name], dtype=np.float32)))
    write_archive(path, entries)


def load_weights(path):
    entries = {t.name: t.data for t in read_archive(path)}
    if "arch" not in entries:
        raise WeightFormatError(f"{path}: no architecture descriptor entry")
    arch = ArchSpec.from_entry(entries.pop("arch"))
    return NetworkWeights(arch, entries)


def random_weights(arch=None, seed=0):
    """He-normal initialized weights with identity batchnorm stats."""
    arch = arch or ArchSpec()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in expected_layout(arch).items():
        if name.endswith(".weight"):
            if ".up." in name or name.endswith("up.weight"):
                fan_in = shape[0] * shape[2] * shape[3]
            else:
                fan_in = shape[1] * shape[2] * shape[3]
            tensors[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(
                np.float32
            )
        elif name.endswith((".bias", ".beta", ".mean")):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        elif name.endswith(".gamma"):
            tensors[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith(".var"):
            tensors[name] = np.full(shape, 1.0 - BN_EPS, dtype=np.float32)
        else:
            raise AssertionError(name)
    return NetworkWeights(arch, tensors)


def identity_weights(arch=None):
    """Weights that make the network an exact pass-through.

    The input is carried through the top encoder and decoder stages as
    paired (+x, -x) channels: every convolution re-derives the pair as
    differences of the incoming pair, which commutes with relu since
    relu(x) - relu(-x) = x. All deeper stages are zeroed, batchnorm is
    configured as identity (var = 1 - eps so the denominator is exactly
    one), and the head subtracts each pair back into a single channel.
    Requires base_filters >= 2 * in_channels and out == in channels.
    """
    arch = arch or ArchSpec()
    if arch.base_filters < 2 * arch.in_channels:
        raise ValueError("identity construction needs base_filters >= 2*in_channels")
    if arch.out_channels != arch.in_channels:
        raise ValueError("identity construction needs out_channels == in_channels")
    tensors = {}
    for name, shape in expected_layout(arch).items():
        if name.endswith(".gamma"):
            tensors[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith(".var"):
            tensors[name] = np.full(shape, 1.0 - BN_EPS, dtype=np.float32)
        else:
            tensors[name] = np.zeros(shape, dtype=np.float32)

    n = arch.in_channels
    w = tensors["enc0.conv1.weight"]
    for c in range(n):
        w[2 * c, c, 1, 1] = 1.0
        w[2 * c + 1, c, 1, 1] = -1.0

    def pair_passthrough(name, k):
        wt = tensors[name]
        mid = k // 2
        for c in range(n):
            wt[2 * c, 2 * c, mid, mid] = 1.0
            wt[2 * c, 2 * c + 1, mid, mid] = -1.0
            wt[2 * c + 1, 2 * c, mid, mid] = -1.0
            wt[2 * c + 1, 2 * c + 1, mid, mid] = 1.0

    pair_passthrough("enc0.conv2.weight", 3)
    # dec0.conv1 sees [skip, upsampled] concatenated, skip first, so
    # the pair channels keep their positions
    pair_passthrough("dec0.conv1.weight", 3)
    pair_passthrough("dec0.conv2.weight", 3)
    w = tensors["head.conv.weight"]
    for c in range(n):
        w[c, 2 * c, 0, 0] = 1.0
        w[c, 2 * c + 1, 0, 0] = -1.0
    return NetworkWeights(arch, tensors)


def conv2d(x, weight, bias):
    """Same-padded stride-1 2-D convolution, float64 accumulation.

    x: (c_in, h, w). weight: (c_out, c_in, k, k) with odd k.
    """
    c_in, h, w = x.shape
    c_out, c_in_w, kh, kw = weight.shape
    if c_in != c_in_w:
        raise ValueError(f"input has {c_in} channels, kernel expects {c_in_w}")
    if kh % 2 != 1 or kw % 2 != 1:
        raise ValueError("kernel size must be odd")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw))).astype(np.float64)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(h * w, c_in * kh * kw)
    wmat = weight.reshape(c_out, c_in * kh * kw).astype(np.float64)
    out = cols @ wmat.T + bias.astype(np.float64)
    return out.reshape(h, w, c_out).transpose(2, 0, 1).astype(np.float32)


def batchnorm(x, gamma, beta, mean, var, eps=BN_EPS):
    """Inference-time batch normalization with stored statistics."""
    denom = np.asarray(var, dtype=np.float64) + eps
    if np.any(denom <= 0):
        raise ValueError("batchnorm variance plus epsilon must be positive")
    scale = (gamma.astype(np.float64) / np.sqrt(denom)).astype(np.float32)
    shift = (
        beta.astype(np.float64) - mean.astype(np.float64) * gamma / np.sqrt(denom)
    ).astype(np.float32)
    return x * scale[:, None, None] + shift[:, None, None]


def relu(x):
    return np.maximum(x, 0.0)


def maxpool2(x):
    """2x2 max pooling, stride 2. Spatial dims must be even."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    return x.reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))


def transpose_conv2(x, weight, bias):
    """2x2 stride-2 transpose convolution (doubles spatial dims).

    x: (c_in, h, w). weight: (c_in, c_out, 2, 2).
    """
    c_in, h, w = x.shape
    if weight.shape[0] != c_in:
        raise ValueError(f"input has {c_in} channels, kernel expects {weight.shape[0]}")
    c_out = weight.shape[1]
    out = np.einsum(
        "ihw,iojk->ohjwk",
        x.astype(np.float64),
        weight.astype(np.float64),
        optimize=True,
    ).reshape(c_out, 2 * h, 2 * w)
    out += bias.astype(np.float64)[:, None, None]
    return out.astype(np.float32)


def _double_conv(x, weights, name):
    x = conv2d(x, weights[f"{name}.conv1.weight"], weights[f"{name}.conv1.bias"])
    x = batchnorm(
        x,
        weights[f"{name}.bn1.gamma"],
        weights[f"{name}.bn1.beta"],
        weights[f"{name}.bn1.mean"],
        weights[f"{name}.bn1.var"],
    )
    x = relu(x)
    x = conv2d(x, weights[f"{name}.conv2.weight"], weights[f"{name}.conv2.bias"])
    x = batchnorm(
        x,
        weights[f"{name}.bn2.gamma"],
        weights[f"{name}.bn2.beta"],
        weights[f"{name}.bn2.mean"],
        weights[f"{name}.bn2.var"],
    )
    return relu(x)


def forward(x, weights, taps=None):
    """Run the network on one (in_channels, h, w) float32 tensor.

    h and w must be divisible by 2**levels. ``taps``, if given, is a
    dict that receives named intermediate activations ("enc0"...,
    "bott", "dec0"..., "out"); encoder taps are the pre-pooling skip
    tensors.
    """
    arch = weights.arch
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3 or x.shape[0] != arch.in_channels:
        raise ValueError(
            f"input must be ({arch.in_channels}, h, w), got {x.shape}"
        )
    div = 2**arch.levels
    if x.shape[1] % div or x.shape[2] % div:
        raise ValueError(f"spatial dims must be divisible by {div}, got {x.shape[1:]}")

    skips = []
    cur = x
    for i in range(arch.levels):
        cur = _double_conv(cur, weights, f"enc{i}")
        if taps is not None:
            taps[f"enc{i}"] = cur
        skips.append(cur)
        cur = maxpool2(cur)

    # dropout regularizes this block during training; at inference it
    # is the identity and is intentionally absent here
    cur = _double_conv(cur, weights, "bott")
    if taps is not None:
        taps["bott"] = cur

    for i in reversed(range(arch.levels)):
        cur = transpose_conv2(
            cur, weights[f"dec{i}.up.weight"], weights[f"dec{i}.up.bias"]
        )
        skip = skips[i]
        if skip.shape[1:] != cur.shape[1:]:
            raise ValueError("skip and upsampled tensors disagree on shape")
        cur = np.concatenate([skip, cur], axis=0)
        cur = _double_conv(cur, weights, f"dec{i}")
        if taps is not None:
            taps[f"dec{i}"] = cur

    out = conv2d(cur, weights["head.conv.weight"], weights["head.conv.bias"])
    if taps is not None:
        taps["out"] = out
    return out


def refine_basis(prepared, weights):
    """Apply the network to a prepared basis; metadata passes through."""
    if prepared.channels.shape[0] != weights.arch.in_channels:
        raise ValueError(
            f"prepared basis has {prepared.channels.shape[0]} channels, "
            f"network expects {weights.arch.in_channels}"
        )
    refined = forward(prepared.channels, weights)
    return replace(prepared, channels=refined)
