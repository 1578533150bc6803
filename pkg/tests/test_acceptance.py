"""Acceptance gate: one test per top-level guarantee of the package.

Each test exercises one end-to-end property at its stated tolerance,
so the -v output gives one pass/fail line per guarantee. The heavier
tests run the full 192x192 eight-coil configuration used everywhere
else in the test suite at reduced size.
"""

import os
import time

import numpy as np
import numpy.testing as npt
import pytest

from drums.cs_solver import SolverConfig, solve
from drums.encoding import (
    MultiCoilKSpace,
    SamplingMask,
    SensitivityMaps,
    fft2c,
    ifft2c,
    sense_adjoint,
    sense_forward,
    uniform_mask,
)
from drums.espirit import estimate_maps
from drums.fitting import (
    FLAG_CLAMPED,
    RelaxationSeries,
    T2_BOUNDS_MS,
    fit_map,
    fit_t2,
)
from drums.metrics import nmse, nrmse, psnr, ssim
from drums.phantom import (
    acquire,
    contrast_times,
    jittered_spec,
    load_kspace,
    load_smaps,
    rasterize,
    simulate_coils,
    simulate_series,
    write_subject,
)
from drums.pipeline import PipelineConfig, load_truth, reconstruct
from drums.refiner import ArchSpec, parameter_count
from drums.sparsity import dwt2, idwt2, soft_threshold
from drums.subspace import decompose, reconstruct as expand, truncate

GRID = 192
COILS = 8
ACS = 24
ACCELERATIONS = (4, 8, 10)


@pytest.fixture(scope="module")
def full_subject(tmp_path_factory):
    """The default full-scale subject: 192x192, 8 coils, 24 ACS lines."""
    out = str(tmp_path_factory.mktemp("fullscale") / "subj00")
    spec = jittered_spec(0, grid=(GRID, GRID), n_coils=COILS)
    write_subject(out, spec, modalities=("T1", "T2"),
                  accelerations=ACCELERATIONS, acs_lines=ACS)
    return out, spec


def test_operator_adjointness():
    """<Ex, y> == <x, E^H y> across grid sizes and coil counts."""
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst = 0.0
    pairs = 0
    for n in (16, 64, 192):
        for q in (1, 4, 8):
            maps_arr = rng.standard_normal((q, n, n)) + 1j * rng.standard_normal(
                (q, n, n)
            )
            sos = np.sqrt(np.sum(np.abs(maps_arr) ** 2, axis=0))
            maps = SensitivityMaps(maps_arr / sos, np.ones((n, n), dtype=bool))
            mask = uniform_mask(n, n, int(rng.integers(2, 5)), acs_lines=n // 4)
            for _ in range(6):
                x = rng.standard_normal((2, n, n)) + 1j * rng.standard_normal((2, n, n))
                y = rng.standard_normal((2, q, n, n)) + 1j * rng.standard_normal(
                    (2, q, n, n)
                )
                ex = sense_forward(x, maps, mask)
                ehy = sense_adjoint(MultiCoilKSpace(y * mask.expand(2), mask), maps)
                lhs = np.vdot(y * mask.expand(2), ex.data)
                rhs = np.vdot(ehy, x)
                scale = np.linalg.norm(ex.data) * np.linalg.norm(y)
                worst = max(worst, abs(lhs - rhs) / scale)
                pairs += 1
    elapsed = time.perf_counter() - t0
    assert pairs >= 50
    assert worst <= 1e-6, f"adjointness violated: {worst:.2e}"
    assert elapsed < 10.0, f"adjointness check took {elapsed:.1f}s"


def test_unitary_closures():
    """FFT, wavelet, and subspace recombination invert to tolerance."""
    rng = np.random.default_rng(1)
    x = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
    k = fft2c(x)
    assert np.abs(ifft2c(k) - x).max() <= 1e-10
    assert abs(np.linalg.norm(k) - np.linalg.norm(x)) <= 1e-10 * np.linalg.norm(x)

    coeffs = dwt2(x, levels=4)
    assert np.abs(idwt2(coeffs) - x).max() <= 1e-10

    u = rng.standard_normal((3, 16, 16)) + 1j * rng.standard_normal((3, 16, 16))
    v = rng.standard_normal((3, 9)) + 1j * rng.standard_normal((3, 9))
    stack = np.einsum("lyx,lt->tyx", u, v)
    back = expand(decompose(stack, 3))
    assert np.abs(back - stack).max() <= 1e-6


def test_rank_truncation_matches_svd_tail():
    """Rank-3 truncation error equals the singular value tail exactly."""
    rng = np.random.default_rng(2)
    for _ in range(10):
        stack = rng.standard_normal((9, 16, 16)) + 1j * rng.standard_normal(
            (9, 16, 16)
        )
        casorati = stack.reshape(9, -1)
        sigma = np.linalg.svd(casorati, compute_uv=False)
        tail = float(np.sqrt(np.sum(sigma[3:] ** 2)))
        approx = expand(truncate(decompose(stack, 9), 3))
        err = float(np.linalg.norm(approx - stack))
        assert abs(err - tail) <= 1e-6, f"{err} vs tail {tail}"


def test_solver_matches_closed_form_prox():
    """On a unitary problem the solve equals one soft-threshold step."""
    rng = np.random.default_rng(3)
    n = 64
    maps = SensitivityMaps(
        np.ones((1, n, n), dtype=np.complex128), np.ones((n, n), dtype=bool)
    )
    mask = uniform_mask(n, n, 1, acs_lines=n)
    x0 = rng.standard_normal((2, n, n)) + 1j * rng.standard_normal((2, n, n))
    x0 /= np.abs(x0).max()
    y = sense_forward(x0, maps, mask)

    cfg = SolverConfig(lam=0.01, iterations=100)
    sol, report = solve(y, maps, cfg)

    expected = np.stack(
        [
            idwt2(soft_threshold(dwt2(x0[t], levels=cfg.wavelet_levels), cfg.lam))
            for t in range(2)
        ]
    )
    assert np.abs(sol - expected).max() <= 1e-5
    assert report.iterations_run == 100

    # a small undersampled multi-coil run keeps its objective monotone
    spec = jittered_spec(5, grid=(64, 64), n_coils=4)
    stack, _ = simulate_series(spec, "T2")
    coils = simulate_coils(spec)
    ksp = acquire(stack, coils, uniform_mask(64, 64, 4, acs_lines=16))
    _, rep = solve(ksp, coils, SolverConfig(iterations=100))
    diffs = np.diff(rep.objectives)
    assert np.all(diffs <= 1e-12 * np.abs(rep.objectives[:-1]) + 1e-15)


def test_espirit_calibration_against_truth(full_subject):
    """Calibrated maps correlate > 0.99 with simulated coil truth."""
    subject_dir, spec = full_subject
    truth = simulate_coils(spec)
    ksp = load_kspace(os.path.join(subject_dir, "T1", "kspace_r04.tnsr"))
    t0 = time.perf_counter()
    est = estimate_maps(ksp)
    elapsed = time.perf_counter() - t0

    support = truth.support
    corrs = []
    for q in range(COILS):
        a = np.abs(est.maps[q][support])
        b = np.abs(truth.maps[q][support])
        a -= a.mean()
        b -= b.mean()
        corrs.append(float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))))
    mean_corr = float(np.mean(corrs))
    assert mean_corr > 0.99, f"map correlation {mean_corr:.4f}"
    assert elapsed < 60.0, f"calibration took {elapsed:.1f}s"


def test_fitting_round_trips(full_subject):
    """Model data regenerate T1 within 1 ms and T2 within 0.1 ms."""
    _, spec = full_subject
    t1_truth, t2_truth, pd, labels = rasterize(spec)
    body = labels > 0

    for modality, truth_vals, tol in (("T1", t1_truth, 1.0), ("T2", t2_truth, 0.1)):
        stack, _ = simulate_series(spec, modality)
        fit = fit_map(stack, contrast_times(modality), modality)
        err = np.abs(fit.values[body] - truth_vals[body])
        assert err.max() <= tol, f"{modality} worst error {err.max():.4f} ms"

    # 1% noise: per-compartment medians stay within 3%
    rng = np.random.default_rng(7)
    for modality, truth_vals in (("T1", t1_truth), ("T2", t2_truth)):
        stack, _ = simulate_series(spec, modality)
        sigma = 0.01 * float(stack.max())
        noisy = np.abs(stack + sigma * rng.standard_normal(stack.shape))
        fit = fit_map(noisy, contrast_times(modality), modality)
        for lab in range(1, len(spec.compartments) + 1):
            sel = labels == lab
            if sel.sum() < 50:
                continue
            true_val = float(np.median(truth_vals[sel]))
            med = float(np.median(fit.values[sel]))
            rel = abs(med - true_val) / true_val
            assert rel <= 0.03, (
                f"{modality} compartment {lab}: median {med:.1f} "
                f"vs {true_val:.1f} ({100 * rel:.2f}%)"
            )
        if modality == "T2":
            lo, hi = T2_BOUNDS_MS
            assert fit.values.min() >= lo and fit.values.max() <= hi

    # the clamp itself: a decay slower than the upper bound pins there
    times = contrast_times("T2").astype(np.float64)
    slow = fit_t2(RelaxationSeries(np.exp(-times / 400.0), times, "T2"))
    assert slow.values == T2_BOUNDS_MS[1]
    assert slow.flags == FLAG_CLAMPED


def test_end_to_end_error_ordering(full_subject):
    """Zero-filling trails the calibrated solve at every acceleration,
    and errors grow with acceleration for both."""
    subject_dir, _ = full_subject
    truth = load_truth(subject_dir, "T1")
    ref = np.abs(truth["stack"]).astype(np.float64)

    fft_err, sense_err = [], []
    for r in ACCELERATIONS:
        fft_res = reconstruct(subject_dir, PipelineConfig(method="fft", acceleration=r))
        fft_err.append(nrmse(fft_res.stack, ref))

        t0 = time.perf_counter()
        res = reconstruct(subject_dir, PipelineConfig(method="espirit", acceleration=r))
        elapsed = time.perf_counter() - t0
        sense_err.append(nrmse(res.stack, ref))
        assert elapsed < 120.0, f"R={r} reconstruction took {elapsed:.0f}s"

        diffs = np.diff(res.report.objectives)
        assert np.all(diffs <= 1e-12 * np.abs(res.report.objectives[:-1]) + 1e-15)

    for f, s, r in zip(fft_err, sense_err, ACCELERATIONS):
        assert f > s, f"R={r}: fft {f:.4f} should trail espirit {s:.4f}"
    assert sense_err[0] < sense_err[1] < sense_err[2], sense_err
    assert fft_err[0] < fft_err[1] < fft_err[2], fft_err


def test_metrics_match_naive_oracles():
    """Vectorized metrics agree with direct-summation loops to 1e-10."""
    rng = np.random.default_rng(4)
    t = rng.uniform(0.0, 1.0, (32, 32))
    r = rng.uniform(0.1, 1.0, (32, 32))

    num = sum((tv - rv) ** 2 for tv, rv in zip(t.ravel(), r.ravel()))
    den = sum(rv**2 for rv in r.ravel())
    assert abs(nrmse(t, r) - (num / den) ** 0.5) <= 1e-10
    assert nmse(t, r) == nrmse(t, r) ** 2

    mse = num / t.size
    peak = max(r.ravel())
    assert abs(psnr(t, r) - 10.0 * np.log10(peak**2 / mse)) <= 1e-10

    w = 5
    lo = min(t.min(), r.min())
    hi = max(t.max(), r.max())
    c1, c2 = (0.01 * (hi - lo)) ** 2, (0.03 * (hi - lo)) ** 2
    vals = []
    for i in range(32 - w + 1):
        for j in range(32 - w + 1):
            tw = t[i : i + w, j : j + w].ravel()
            rw = r[i : i + w, j : j + w].ravel()
            mt = sum(tw) / tw.size
            mr = sum(rw) / rw.size
            vt = sum((v - mt) ** 2 for v in tw) / tw.size
            vr = sum((v - mr) ** 2 for v in rw) / rw.size
            cov = sum((a - mt) * (b - mr) for a, b in zip(tw, rw)) / tw.size
            vals.append(
                (2 * mt * mr + c1) * (2 * cov + c2)
                / ((mt**2 + mr**2 + c1) * (vt + vr + c2))
            )
    assert abs(ssim(t, r) - sum(vals) / len(vals)) <= 1e-10


def test_parameter_count_documented():
    """Network size sits within 1% of the reference total and the
    layer arithmetic behind it is written down in the docs."""
    count = parameter_count(ArchSpec())
    reference = 31036800
    rel = abs(count - reference) / reference
    assert rel <= 0.01, f"parameter count {count:,} is {100 * rel:.2f}% off"

    doc = os.path.join(os.path.dirname(__file__), "..", "docs", "architecture.md")
    with open(doc) as fh:
        text = fh.read()
    assert f"{count:,}" in text
    assert f"{reference:,}" in text
