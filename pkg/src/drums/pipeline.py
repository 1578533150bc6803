"""End-to-end reconstruction flows over stored phantom datasets.

A dataset directory (one per subject) is produced by the phantom
generator; this module wires the reconstruction methods over it:

* fft: zero-filled root-sum-of-squares baseline
* espirit: calibrated sensitivities + regularized SENSE solve
* lowrank: espirit followed by rank-L subspace truncation
* drums: lowrank with the learned spatial-basis refinement between
  truncation and recombination

Every public entry point returns plain data plus report objects; the
command-line layer handles argument parsing and file naming.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor_io
from .cs_solver import SolveReport, SolverConfig, solve
from .encoding import ifft2c
from .espirit import CalibrationConfig, estimate_maps
from .fitting import fit_map
from .metrics import MetricReport, nrmse, psnr, ssim
from .phantom import contrast_times, load_kspace, load_smaps
from .refiner import load_weights, refine_basis
from .subspace import decompose, merge_refined, prepare_basis, reconstruct as expand
from .tensor_io import Tensor, write_archive

METHODS = ("fft", "espirit", "lowrank", "drums")


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


class DataError(Exception):
    """Dataset files are missing or malformed."""


@dataclass
class PipelineConfig:
    method: str = "drums"
    modality: str = "T1"
    acceleration: int = 8
    rank: int = 3
    weights_path: str = ""
    use_stored_maps: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}, choose from {METHODS}")
        if self.modality not in ("T1", "T2"):
            raise ConfigError(f"modality must be T1 or T2, got {self.modality!r}")
        if self.acceleration < 1:
            raise ConfigError("acceleration must be >= 1")
        if self.rank < 1:
            raise ConfigError("rank must be >= 1")
        if self.method == "drums" and not self.weights_path:
            raise ConfigError("method 'drums' requires a weights path")


_CONFIG_KEYS = {
    "method": str,
    "modality": str,
    "acceleration": int,
    "rank": int,
    "weights_path": str,
    "use_stored_maps": lambda v: v.lower() in ("1", "true", "yes"),
    "lam": float,
    "iterations": int,
    "power_iterations": int,
    "wavelet_levels": int,
    "kernel_size": int,
    "nullspace_threshold": float,
    "eigenvalue_crop": float,
    "seed": int,
}


def load_config(path, overrides=None):
    """Parse a key = value config file into a PipelineConfig.

    Unknown keys and unparsable values raise ConfigError. ``overrides``
    (a dict) wins over file values.
    """
    values = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            for ln, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{ln}: expected key = value")
                key, val = (s.strip() for s in line.split("=", 1))
                if key not in _CONFIG_KEYS:
                    raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
                try:
                    values[key] = _CONFIG_KEYS[key](val)
                except ValueError as exc:
                    raise ConfigError(f"{path}:{ln}: bad value for {key}: {exc}")
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return build_config(values)


def build_config(values):
    solver_kwargs = {}
    for src, dst in (
        ("lam", "lam"),
        ("iterations", "iterations"),
        ("power_iterations", "power_iterations"),
        ("wavelet_levels", "wavelet_levels"),
        ("seed", "seed"),
    ):
        if src in values:
            solver_kwargs[dst] = values.pop(src)
    calib_kwargs = {}
    if "kernel_size" in values:
        k = values.pop("kernel_size")
        calib_kwargs["kernel_size"] = (k, k)
    for key in ("nullspace_threshold", "eigenvalue_crop"):
        if key in values:
            calib_kwargs[key] = values.pop(key)
    try:
        return PipelineConfig(
            solver=SolverConfig(**solver_kwargs),
            calibration=CalibrationConfig(**calib_kwargs),
            **values,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))


@dataclass
class ReconResult:
    stack: np.ndarray
    method: str
    report: SolveReport = None
    maps_source: str = ""
    timings_s: dict = field(default_factory=dict)
    basis_rank: int = 0
    basis: object = None


def _kspace_path(subject_dir, modality, acceleration):
    name = "kspace_full.tnsr" if acceleration == 1 else f"kspace_r{acceleration:02d}.tnsr"
    path = os.path.join(subject_dir, modality, name)
    if not os.path.exists(path):
        raise DataError(f"no stored acquisition at {path}")
    return path


def rss_reconstruct(kspace):
    """Zero-filled root-sum-of-squares baseline reconstruction."""
    coil_images = ifft2c(kspace.data)
    return np.sqrt(np.sum(np.abs(coil_images) ** 2, axis=1)).astype(np.float64)


def reconstruct(subject_dir, config):
    """Run one reconstruction method on one stored subject/modality."""
    cfg = config
    t0 = time.perf_counter()
    timings = {}
    ksp = load_kspace(_kspace_path(subject_dir, cfg.modality, cfg.acceleration))
    timings["load"] = time.perf_counter() - t0

    if cfg.method == "fft":
        t1 = time.perf_counter()
        stack = rss_reconstruct(ksp)
        timings["reconstruct"] = time.perf_counter() - t1
        return ReconResult(stack=stack, method="fft", timings_s=timings)

    t1 = time.perf_counter()
    if cfg.use_stored_maps:
        maps_path = os.path.join(subject_dir, "smaps.tnsr")
        if not os.path.exists(maps_path):
            raise DataError(f"no stored sensitivities at {maps_path}")
        maps = load_smaps(maps_path)
        maps_source = "stored"
    else:
        maps = estimate_maps(ksp, cfg.calibration)
        maps_source = "calibrated"
    timings["maps"] = time.perf_counter() - t1

    t1 = time.perf_counter()
    stack, report = solve(ksp, maps, cfg.solver)
    timings["solve"] = time.perf_counter() - t1

    basis_rank = 0
    basis = None
    if cfg.method in ("lowrank", "drums"):
        t1 = time.perf_counter()
        rank = min(cfg.rank, stack.shape[0])
        basis = decompose(stack, rank)
        basis_rank = rank
        if cfg.method == "drums":
            if not os.path.exists(cfg.weights_path):
                raise ConfigError(f"weights not found: {cfg.weights_path}")
            weights = load_weights(cfg.weights_path)
            prepared = prepare_basis(basis)
            refined = refine_basis(prepared, weights)
            basis = merge_refined(basis, refined)
        stack = expand(basis)
        timings["subspace"] = time.perf_counter() - t1

    timings["total"] = time.perf_counter() - t0
    return ReconResult(
        stack=stack,
        method=cfg.method,
        report=report,
        maps_source=maps_source,
        timings_s=timings,
        basis_rank=basis_rank,
        basis=basis,
    )


def save_recon(path, result, times_ms):
    entries = [
        Tensor("stack", tensor_io.as_complex64(result.stack)),
        Tensor("times_ms", tensor_io.as_real32(times_ms)),
    ]
    write_archive(path, entries)


def load_truth(subject_dir, modality):
    path = os.path.join(subject_dir, modality, "truth.tnsr")
    if not os.path.exists(path):
        raise DataError(f"no truth archive at {path}")
    entries = tensor_io.read_archive_dict(path)
    for key in ("stack", "times_ms", "values", "roi"):
        if key not in entries:
            raise DataError(f"{path}: missing entry {key!r}")
    return entries


def evaluate_stack(test_stack, ref_stack, roi=None):
    """Contrast-averaged image metrics of a reconstruction.

    nrmse is computed over the whole stack at once; psnr and ssim are
    averaged over contrasts.
    """
    test = np.abs(np.asarray(test_stack))
    ref = np.abs(np.asarray(ref_stack))
    if test.shape != ref.shape:
        raise DataError(
            f"stack shapes differ: test {test.shape}, reference {ref.shape}"
        )
    rows = [MetricReport("nrmse", nrmse(test, ref, None if roi is None else
                                        np.broadcast_to(roi, ref.shape)))]
    ps = [psnr(test[t], ref[t], roi) for t in range(ref.shape[0])]
    ss = [ssim(test[t], ref[t], roi) for t in range(ref.shape[0])]
    rows.append(MetricReport("psnr", float(np.mean(ps))))
    rows.append(MetricReport("ssim", float(np.mean(ss))))
    return rows


def evaluate_map(test_map, ref_map, roi):
    """Map-domain error restricted to an roi."""
    return [
        MetricReport("map_nrmse", nrmse(test_map, ref_map, roi)),
    ]


def write_metrics_csv(path, rows, meta=None):
    meta = meta or {}
    cols = ["metric", "value"] + sorted(meta)
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            cells = [row.metric, f"{row.value:.10g}"] + [str(meta[k]) for k in sorted(meta)]
            fh.write(",".join(cells) + "\n")


def read_metrics_csv(path):
    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            cells = line.strip().split(",")
            if len(cells) != len(header):
                raise DataError(f"{path}: ragged csv row")
            rows.append(dict(zip(header, cells)))
    return rows


def write_manifest(out_dir, command, settings):
    """Record what produced the contents of out_dir."""
    from . import __version__

    path = os.path.join(out_dir, f"{command}_manifest.json")
    payload = {"command": command, "version": __version__, "settings": settings}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return path


def _to_uint8(img, lo=None, hi=None):
    img = np.asarray(img, dtype=np.float64)
    lo = float(img.min()) if lo is None else lo
    hi = float(img.max()) if hi is None else hi
    if hi <= lo:
        return np.zeros(img.shape, dtype=np.uint8)
    scaled = np.clip((img - lo) / (hi - lo), 0.0, 1.0)
    return (scaled * 255).astype(np.uint8)


def save_panel_png(path, images, titles=None, window=None):
    """Write a horizontal strip of grayscale panels."""
    from PIL import Image

    panels = []
    for img in images:
        mag = np.abs(np.asarray(img))
        lo, hi = (None, None) if window is None else window
        panels.append(_to_uint8(mag, lo, hi))
    strip = np.concatenate(panels, axis=1)
    Image.fromarray(strip, mode="L").save(path)
