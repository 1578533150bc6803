"""Low-rank subspace factorization of contrast image series.

A contrast stack X(t, r) is factored through the SVD of its Casorati
matrix (pixels x contrasts) into

    X = sum_l  a_l * C_l(r) * T_l(t)

with spatial basis images C_l, temporal basis vectors T_l, and
singular values a_l in descending order. Truncating to rank L gives
the best rank-L approximation in the Frobenius sense.

The spatial basis is what the learned refiner operates on;
``prepare_basis``/``recombine`` convert between the physical complex
basis and the refiner's real-channel tensor convention and are exact
inverses of each other when the refiner is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_io
from .tensor_io import ArchiveError, Tensor

CROP_SIZE = 128


@dataclass
class SubspaceBasis:
    """Rank-L factorization of a contrast stack.

    spatial: (L, ny, nx) complex basis images.
    temporal: (L, nt) complex basis vectors, orthonormal rows.
    singular_values: (L,) non-negative, descending.
    """

    spatial: np.ndarray
    temporal: np.ndarray
    singular_values: np.ndarray

    def __post_init__(self):
        if self.spatial.ndim != 3 or self.temporal.ndim != 2:
            raise ValueError("spatial must be (L, ny, nx) and temporal (L, nt)")
        if not (
            self.spatial.shape[0]
            == self.temporal.shape[0]
            == self.singular_values.shape[0]
        ):
            raise ValueError("basis components disagree on rank")
        sv = np.asarray(self.singular_values, dtype=np.float64)
        if np.any(sv < 0) or np.any(np.diff(sv) > 1e-12 * max(sv[0], 1.0)):
            raise ValueError("singular values must be non-negative and descending")

    @property
    def rank(self):
        return self.spatial.shape[0]

    @property
    def grid(self):
        return self.spatial.shape[1:]


@dataclass
class PreparedBasis:
    """Spatial basis in the refiner's tensor convention.

    channels: (2L, crop, crop) float32; for each basis index l,
    channel 2l is the real part and 2l+1 the imaginary part of the
    dephased, cropped basis image, z-scored per channel.

    The remaining fields are the bookkeeping needed to invert the
    preparation: per-basis dephasing angles, per-channel mean/std,
    the crop offset into the (possibly padded) grid, the pad applied
    before cropping, and the original grid shape.
    """

    channels: np.ndarray
    phases: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    crop_offset: tuple
    pad: tuple
    grid: tuple

    @property
    def rank(self):
        return self.channels.shape[0] // 2


def decompose(stack, rank):
    """SVD factorization of a (contrast, y, x) stack, truncated to
    ``rank`` components (at most min(n_contrasts, n_pixels)).

    The phase convention is deterministic: for each component the
    temporal entry of largest magnitude is rotated to the positive
    real axis (ties resolve to the earliest contrast).
    """
    stack = np.asarray(stack)
    if stack.ndim != 3:
        raise ValueError(f"stack must be (t, y, x), got {stack.shape}")
    nt, ny, nx = stack.shape
    if rank < 1:
        raise ValueError("rank must be >= 1")
    full = min(nt, ny * nx)
    if rank > full:
        raise ValueError(f"rank {rank} exceeds attainable rank {full}")
    casorati = stack.reshape(nt, ny * nx).T
    u, s, vh = np.linalg.svd(casorati, full_matrices=False)
    u = u[:, :rank]
    s = s[:rank]
    vh = vh[:rank]
    spatial = np.ascontiguousarray(u.T.reshape(rank, ny, nx))
    temporal = np.ascontiguousarray(vh)
    for l in range(rank):
        j = int(np.argmax(np.abs(temporal[l])))
        a = temporal[l, j]
        if np.abs(a) > 0:
            rot = np.conj(a) / np.abs(a)
            temporal[l] *= rot
            spatial[l] *= np.conj(rot)
    return SubspaceBasis(spatial, temporal, s.astype(np.float64))


def truncate(basis, rank):
    """Keep the leading ``rank`` components."""
    if rank < 1 or rank > basis.rank:
        raise ValueError(f"rank must be in [1, {basis.rank}]")
    return SubspaceBasis(
        basis.spatial[:rank].copy(),
        basis.temporal[:rank].copy(),
        basis.singular_values[:rank].copy(),
    )


def reconstruct(basis):
    """Expand the factorization back to a (contrast, y, x) stack."""
    return np.einsum(
        "l,lyx,lt->tyx",
        basis.singular_values,
        basis.spatial,
        basis.temporal,
        optimize=True,
    )


def _crop_window(n, crop):
    if n >= crop:
        pad = 0
        start = (n - crop) // 2
    else:
        pad = crop - n
        start = 0
    return pad, start


def prepare_basis(basis, crop=CROP_SIZE):
    """Convert the spatial basis to the refiner input tensor.

    Steps per component: remove the mean spatial phase, zero-pad any
    axis shorter than ``crop``, center-crop to crop x crop, split into
    real/imaginary channels, and z-score each channel. All statistics
    are recorded so the mapping can be undone exactly.
    """
    ny, nx = basis.grid
    pad_y, y0 = _crop_window(ny, crop)
    pad_x, x0 = _crop_window(nx, crop)
    rank = basis.rank
    channels = np.empty((2 * rank, crop, crop), dtype=np.float64)
    phases = np.empty(rank, dtype=np.float64)
    for l in range(rank):
        total = complex(np.sum(basis.spatial[l]))
        phases[l] = np.angle(total) if abs(total) > 0 else 0.0
        dephased = basis.spatial[l] * np.exp(-1j * phases[l])
        if pad_y or pad_x:
            dephased = np.pad(dephased, ((0, pad_y), (0, pad_x)))
        window = dephased[y0 : y0 + crop, x0 : x0 + crop]
        channels[2 * l] = window.real
        channels[2 * l + 1] = window.imag
    mean = channels.mean(axis=(1, 2))
    std = channels.std(axis=(1, 2))
    std = np.where(std > 0, std, 1.0)
    channels = (channels - mean[:, None, None]) / std[:, None, None]
    return PreparedBasis(
        channels=channels.astype(np.float32),
        phases=phases,
        mean=mean,
        std=std,
        crop_offset=(y0, x0),
        pad=(pad_y, pad_x),
        grid=(ny, nx),
    )


def merge_refined(basis, prepared):
    """Paste a (possibly refined) prepared basis back into a copy of
    ``basis``. Pixels outside the crop window keep their original
    values; the z-scoring, crop, and dephasing are all inverted.
    """
    if prepared.rank != basis.rank:
        raise ValueError(
            f"prepared basis rank {prepared.rank} does not match basis rank {basis.rank}"
        )
    if prepared.grid != basis.grid:
        raise ValueError("prepared basis grid does not match basis grid")
    ny, nx = basis.grid
    crop = prepared.channels.shape[-1]
    y0, x0 = prepared.crop_offset
    pad_y, pad_x = prepared.pad
    spatial = basis.spatial.astype(np.complex128, copy=True)
    channels = prepared.channels.astype(np.float64)
    channels = channels * prepared.std[:, None, None] + prepared.mean[:, None, None]
    for l in range(basis.rank):
        window = channels[2 * l] + 1j * channels[2 * l + 1]
        dephased = spatial[l] * np.exp(-1j * prepared.phases[l])
        if pad_y or pad_x:
            work = np.pad(dephased, ((0, pad_y), (0, pad_x)))
        else:
            work = dephased
        work[y0 : y0 + crop, x0 : x0 + crop] = window
        work = work[:ny, :nx]
        spatial[l] = work * np.exp(1j * prepared.phases[l])
    return SubspaceBasis(spatial, basis.temporal.copy(), basis.singular_values.copy())


def save_basis(path, basis, prepared):
    """Store a factorization plus its prepared form in one archive.

    This is the training-data interchange: consumers get the physical
    basis (C, T, a), the network-ready channel tensor, and everything
    needed to map between the two. Values are narrowed to 32-bit.
    """
    if prepared.rank != basis.rank:
        raise ValueError(
            f"prepared basis rank {prepared.rank} does not match basis rank {basis.rank}"
        )
    if prepared.grid != basis.grid:
        raise ValueError("prepared basis grid does not match basis grid")
    zstats = np.stack([prepared.mean, prepared.std])
    entries = [
        Tensor("C", tensor_io.as_complex64(basis.spatial)),
        Tensor("T", tensor_io.as_complex64(basis.temporal)),
        Tensor("a", tensor_io.as_real32(basis.singular_values)),
        Tensor("prepared", tensor_io.as_real32(prepared.channels)),
        Tensor("phi", tensor_io.as_real32(prepared.phases)),
        Tensor("zstats", tensor_io.as_real32(zstats)),
    ]
    tensor_io.write_archive(path, entries)


def load_basis(path):
    """Read a stored factorization back as (SubspaceBasis, PreparedBasis).

    The crop bookkeeping is not stored; it is a deterministic function
    of the grid and crop size and is recomputed here.
    """
    entries = tensor_io.read_archive_dict(path)
    for key in ("C", "T", "a", "prepared", "phi", "zstats"):
        if key not in entries:
            raise ArchiveError(f"{path}: missing entry {key!r}")
    spatial = entries["C"].astype(np.complex128)
    temporal = entries["T"].astype(np.complex128)
    basis = SubspaceBasis(spatial, temporal, entries["a"].astype(np.float64))
    channels = entries["prepared"]
    if channels.ndim != 3 or channels.shape[0] != 2 * basis.rank:
        raise ArchiveError(
            f"{path}: prepared tensor shape {channels.shape} does not "
            f"match rank {basis.rank}"
        )
    zstats = entries["zstats"].astype(np.float64)
    if zstats.shape != (2, 2 * basis.rank):
        raise ArchiveError(f"{path}: zstats shape {zstats.shape} is invalid")
    ny, nx = basis.grid
    crop = channels.shape[-1]
    pad_y, y0 = _crop_window(ny, crop)
    pad_x, x0 = _crop_window(nx, crop)
    prepared = PreparedBasis(
        channels=channels,
        phases=entries["phi"].astype(np.float64),
        mean=zstats[0],
        std=zstats[1],
        crop_offset=(y0, x0),
        pad=(pad_y, pad_x),
        grid=(ny, nx),
    )
    return basis, prepared
