"""Synthetic cardiac mapping phantom and acquisition simulator.

The phantom is a 2-D short-axis-like arrangement of ellipses (torso,
subcutaneous fat, left-ventricular blood pool, myocardial ring, right
ventricle) with literature-range T1/T2 values. From the tissue maps it
synthesizes contrast image series for either modality:

* T1: inversion recovery, s(TI) = pd * (1 - 2 exp(-TI / T1)), taken
  as magnitude images (the polarity is restored by the fitting stage)
* T2: T2 preparation, s(T_prep) = pd * exp(-T_prep / T2)

Coil sensitivities are smooth Gaussian lobes centered on a ring
around the object with mild per-coil linear phase, sum-of-squares
normalized and phase referenced to the first coil. The acquisition
simulator applies the SENSE forward model, an undersampling mask, and
optional complex Gaussian noise on the sampled locations.

All randomness is drawn from seeded generators, so datasets are fully
reproducible from their specs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .encoding import (
    MultiCoilKSpace,
    SamplingMask,
    SensitivityMaps,
    sense_forward,
    uniform_mask,
)
from .fitting import ParameterMap, T1_BOUNDS_MS, T2_BOUNDS_MS, FLAG_OK
from . import tensor_io
from .tensor_io import Tensor, write_archive

T1_INVERSION_TIMES_MS = (100.0, 180.0, 260.0, 900.0, 1000.0, 1050.0, 1700.0, 1800.0, 2500.0)
T2_PREP_TIMES_MS = (0.0, 35.0, 55.0)

DEFAULT_ACCELERATIONS = (4, 8, 10)
DEFAULT_ACS_LINES = 24


@dataclass(frozen=True)
class Ellipse:
    """One tissue compartment: an ellipse painted over what is below.

    Geometry is fractional with respect to the grid; angle in degrees.
    """

    label: str
    center: tuple
    semi_axes: tuple
    angle_deg: float
    t1_ms: float
    t2_ms: float
    proton_density: float


def _heart_compartments():
    return (
        Ellipse("torso", (0.50, 0.50), (0.40, 0.44), 0.0, 1100.0, 35.0, 0.75),
        Ellipse("fat", (0.50, 0.50), (0.34, 0.38), 0.0, 350.0, 110.0, 0.95),
        Ellipse("muscle", (0.58, 0.50), (0.26, 0.31), 0.0, 1100.0, 35.0, 0.72),
        Ellipse("myocardium", (0.44, 0.44), (0.135, 0.135), 0.0, 1200.0, 45.0, 0.80),
        Ellipse("lv_blood", (0.44, 0.44), (0.085, 0.085), 0.0, 1900.0, 180.0, 1.00),
        Ellipse("rv_blood", (0.46, 0.62), (0.10, 0.065), 25.0, 1900.0, 180.0, 1.00),
    )


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry, tissue, and acquisition parameters of one phantom."""

    grid: tuple = (192, 192)
    compartments: tuple = field(default_factory=_heart_compartments)
    n_coils: int = 8
    noise_relative: float = 0.0
    seed: int = 0

    def __post_init__(self):
        ny, nx = self.grid
        if ny < 16 or nx < 16:
            raise ValueError("grid must be at least 16 x 16")
        if self.n_coils < 1:
            raise ValueError("n_coils must be >= 1")
        if self.noise_relative < 0:
            raise ValueError("noise_relative must be non-negative")


def jittered_spec(subject_seed, grid=(192, 192), n_coils=8, noise_relative=0.0):
    """A per-subject random variation of the default anatomy.

    Centers, sizes, relaxation times, and densities are jittered with
    bounded relative perturbations, deterministically in the seed.
    """
    rng = np.random.default_rng(subject_seed)
    comps = []
    for c in _heart_compartments():
        cy, cx = c.center
        ay, ax = c.semi_axes
        comps.append(
            replace(
                c,
                center=(cy + rng.uniform(-0.015, 0.015), cx + rng.uniform(-0.015, 0.015)),
                semi_axes=(ay * rng.uniform(0.9, 1.1), ax * rng.uniform(0.9, 1.1)),
                angle_deg=c.angle_deg + rng.uniform(-10, 10),
                t1_ms=c.t1_ms * rng.uniform(0.92, 1.08),
                t2_ms=c.t2_ms * rng.uniform(0.92, 1.08),
                proton_density=min(c.proton_density * rng.uniform(0.95, 1.05), 1.0),
            )
        )
    return PhantomSpec(
        grid=grid,
        compartments=tuple(comps),
        n_coils=n_coils,
        noise_relative=noise_relative,
        seed=subject_seed,
    )


def rasterize(spec):
    """Paint compartments in order onto (t1, t2, pd, label) grids.

    Labels index into spec.compartments plus one, zero is background.
    """
    ny, nx = spec.grid
    yy, xx = np.meshgrid(
        (np.arange(ny) + 0.5) / ny, (np.arange(nx) + 0.5) / nx, indexing="ij"
    )
    t1 = np.zeros((ny, nx))
    t2 = np.zeros((ny, nx))
    pd = np.zeros((ny, nx))
    labels = np.zeros((ny, nx), dtype=np.int32)
    for idx, c in enumerate(spec.compartments):
        th = np.deg2rad(c.angle_deg)
        dy = yy - c.center[0]
        dx = xx - c.center[1]
        u = np.cos(th) * dy + np.sin(th) * dx
        v = -np.sin(th) * dy + np.cos(th) * dx
        inside = (u / c.semi_axes[0]) ** 2 + (v / c.semi_axes[1]) ** 2 <= 1.0
        t1[inside] = c.t1_ms
        t2[inside] = c.t2_ms
        pd[inside] = c.proton_density
        labels[inside] = idx + 1
    return t1, t2, pd, labels


def contrast_times(modality):
    if modality == "T1":
        return np.asarray(T1_INVERSION_TIMES_MS)
    if modality == "T2":
        return np.asarray(T2_PREP_TIMES_MS)
    raise ValueError(f"modality must be 'T1' or 'T2', got {modality!r}")


def simulate_series(spec, modality):
    """Noise-free magnitude contrast stack plus ground-truth maps.

    Returns (stack, truth) where stack is (n_contrast, ny, nx) real
    non-negative and truth is a ParameterMap holding the rasterized
    parameter with zero residual.
    """
    t1, t2, pd, labels = rasterize(spec)
    times = contrast_times(modality)
    if modality == "T1":
        with np.errstate(divide="ignore", invalid="ignore"):
            decay = np.exp(-times[:, None, None] / np.where(t1 > 0, t1, np.inf))
        stack = np.abs(pd[None] * (1.0 - 2.0 * decay))
        stack[:, pd == 0] = 0.0
        values, bounds = t1, T1_BOUNDS_MS
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            decay = np.exp(-times[:, None, None] / np.where(t2 > 0, t2, np.inf))
        stack = pd[None] * decay
        stack[:, pd == 0] = 0.0
        values, bounds = t2, T2_BOUNDS_MS
    truth = ParameterMap(
        values=values,
        aux={"pd": pd, "labels": labels.astype(np.float64)},
        residual=np.zeros_like(values),
        flags=np.full(values.shape, FLAG_OK, dtype=np.uint8),
        modality=modality,
        bounds=bounds,
    )
    return stack, truth


def heart_roi(spec):
    """Boolean mask of the myocardium and ventricular blood pools."""
    _, _, _, labels = rasterize(spec)
    names = [c.label for c in spec.compartments]
    roi = np.zeros(labels.shape, dtype=bool)
    for idx, name in enumerate(names):
        if name in ("myocardium", "lv_blood", "rv_blood"):
            roi |= labels == idx + 1
    return roi


def simulate_coils(spec):
    """Smooth ring-of-lobes coil sensitivities on the object support.

    Single-coil specs produce a uniform all-ones map. Maps are
    sum-of-squares normalized on support and phase referenced so the
    first coil is real and positive there.
    """
    ny, nx = spec.grid
    _, _, pd, _ = rasterize(spec)
    support = pd > 0
    if spec.n_coils == 1:
        maps = np.where(support, 1.0, 0.0)[None].astype(np.complex128)
        return SensitivityMaps(maps, support)
    rng = np.random.default_rng(spec.seed + 7919)
    yy, xx = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    radius = 0.55 * min(ny, nx)
    width = 0.7 * min(ny, nx)
    maps = np.empty((spec.n_coils, ny, nx), dtype=np.complex128)
    for q in range(spec.n_coils):
        ang = 2.0 * np.pi * q / spec.n_coils
        cy = ny / 2 + radius * np.sin(ang)
        cx = nx / 2 + radius * np.cos(ang)
        mag = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * width**2))
        fy = rng.uniform(-0.25, 0.25)
        fx = rng.uniform(-0.25, 0.25)
        phase = 2.0 * np.pi * (fy * yy / ny + fx * xx / nx) + rng.uniform(0, 2 * np.pi)
        maps[q] = mag * np.exp(1j * phase)
    sos = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    maps /= sos[None]
    ref = maps[0].copy()
    ref_phase = np.exp(-1j * np.angle(np.where(np.abs(ref) > 0, ref, 1.0)))
    maps *= ref_phase[None]
    maps[:, ~support] = 0.0
    return SensitivityMaps(maps, support)


def acquire(stack, maps, mask, noise_std=0.0, seed=0):
    """Simulate the sampled multi-coil acquisition of a stack.

    noise_std is the absolute per-sample standard deviation of the
    complex Gaussian noise added on sampled k-space locations.
    """
    ksp = sense_forward(np.asarray(stack, dtype=np.complex128), maps, mask)
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        shape = ksp.data.shape
        noise = rng.normal(0.0, noise_std / np.sqrt(2.0), shape) + 1j * rng.normal(
            0.0, noise_std / np.sqrt(2.0), shape
        )
        data = ksp.data + noise * mask.expand(shape[0])
        return MultiCoilKSpace(data, mask)
    return ksp


def _mask_name(r):
    return f"mask_r{r:02d}"


def write_subject(out_dir, spec, modalities=("T1", "T2"),
                  accelerations=DEFAULT_ACCELERATIONS, acs_lines=DEFAULT_ACS_LINES):
    """Generate and store one subject: maps, truth, and k-space.

    Creates under out_dir:

        smaps.tnsr                  sensitivities and support
        <modality>/truth.tnsr       noise-free stack, times, truth map
        <modality>/kspace_full.tnsr fully sampled acquisition
        <modality>/kspace_r{R}.tnsr undersampled acquisitions

    Returns a manifest dict describing the files.
    """
    os.makedirs(out_dir, exist_ok=True)
    maps = simulate_coils(spec)
    roi = heart_roi(spec)
    write_archive(
        os.path.join(out_dir, "smaps.tnsr"),
        [
            Tensor("smaps", tensor_io.as_complex64(maps.maps)),
            Tensor("support", tensor_io.as_real32(maps.support)),
        ],
    )
    manifest = {
        "grid": list(spec.grid),
        "n_coils": spec.n_coils,
        "seed": spec.seed,
        "noise_relative": spec.noise_relative,
        "modalities": {},
    }
    ny, nx = spec.grid
    for modality in modalities:
        mdir = os.path.join(out_dir, modality)
        os.makedirs(mdir, exist_ok=True)
        stack, truth = simulate_series(spec, modality)
        times = contrast_times(modality)
        noise_std = 0.0
        if spec.noise_relative > 0:
            # scale relative noise by the peak k-space magnitude of the
            # noise-free acquisition
            probe = acquire(stack, maps, uniform_mask(ny, nx, 1, acs_lines))
            noise_std = spec.noise_relative * float(np.max(np.abs(probe.data)))
        write_archive(
            os.path.join(mdir, "truth.tnsr"),
            [
                Tensor("stack", tensor_io.as_complex64(stack)),
                Tensor("times_ms", tensor_io.as_real32(times)),
                Tensor("values", tensor_io.as_real32(truth.values)),
                Tensor("pd", tensor_io.as_real32(truth.aux["pd"])),
                Tensor("labels", tensor_io.as_real32(truth.aux["labels"])),
                Tensor("roi", tensor_io.as_real32(roi)),
            ],
        )
        entry = {"times_ms": [float(v) for v in times], "kspace": {}}
        for r in (1,) + tuple(accelerations):
            mask = uniform_mask(ny, nx, r, acs_lines)
            ksp = acquire(stack, maps, mask, noise_std=noise_std, seed=spec.seed + r)
            name = "kspace_full.tnsr" if r == 1 else f"kspace_r{r:02d}.tnsr"
            write_archive(
                os.path.join(mdir, name),
                [
                    Tensor("kspace", tensor_io.as_complex64(ksp.data)),
                    Tensor("mask", tensor_io.as_real32(mask.mask)),
                    Tensor(
                        "sampling",
                        tensor_io.as_real32([r, acs_lines, noise_std]),
                    ),
                ],
            )
            entry["kspace"][str(r)] = name
        manifest["modalities"][modality] = entry
    with open(os.path.join(out_dir, "subject.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_kspace(path):
    """Read a stored acquisition back into a MultiCoilKSpace."""
    entries = tensor_io.read_archive_dict(path)
    for key in ("kspace", "mask", "sampling"):
        if key not in entries:
            raise tensor_io.ArchiveError(f"{path}: missing entry {key!r}")
    r, acs_lines, _ = (float(v) for v in entries["sampling"])
    mask = SamplingMask(
        entries["mask"].astype(np.float64),
        acceleration=int(r),
        acs_lines=int(acs_lines),
    )
    return MultiCoilKSpace(entries["kspace"].astype(np.complex128), mask)


def load_smaps(path):
    entries = tensor_io.read_archive_dict(path)
    for key in ("smaps", "support"):
        if key not in entries:
            raise tensor_io.ArchiveError(f"{path}: missing entry {key!r}")
    return SensitivityMaps(
        entries["smaps"].astype(np.complex128), entries["support"] > 0.5
    )
