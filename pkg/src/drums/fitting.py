"""Voxelwise relaxation parameter fitting from magnitude image series.

T1 mapping uses the three-parameter inversion-recovery model

    s(TI) = | A - B * exp(-TI / T1*) |,    T1 = (B / A - 1) * T1*

fit to magnitude data with polarity restoration: every prefix of the
sorted inversion times may have inverted sign, so each candidate sign
pattern is scored and the best (pattern, T1*) pair wins. For each
candidate T1* the amplitudes (A, B) have a closed-form least-squares
solution, so the search is over T1* alone: a logarithmic grid pass
followed by golden-section refinement of the best cell.

T2 mapping uses the mono-exponential model

    s(T_prep) = A * exp(-T_prep / T2)

with the same grid-then-refine strategy (the amplitude is closed-form
per candidate T2).

Values are clamped to physiologic bounds and flagged: 0 = clean fit,
1 = zero input, 2 = clamped at a bound, 3 = fallback for a degenerate
fit. Fitting magnitude data makes every fit invariant to a global
complex scaling of the input series.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

T1_BOUNDS_MS = (0.0, 5000.0)
T2_BOUNDS_MS = (0.0, 250.0)

FLAG_OK = 0
FLAG_ZERO = 1
FLAG_CLAMPED = 2
FLAG_FALLBACK = 3

_T2_GRID = (0.5, T2_BOUNDS_MS[1], 64)
# T1* can exceed the T1 bound when B/A is close to 1, so its search
# grid extends well past it
_T1_STAR_GRID = (20.0, 20000.0, 96)
_GOLDEN_ITERS = 48
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class RelaxationSeries:
    """Magnitude signals (..., n_t) sampled at the given times (ms)."""

    signals: np.ndarray
    times_ms: np.ndarray
    modality: str

    def __post_init__(self):
        sig = np.asarray(self.signals, dtype=np.float64)
        t = np.asarray(self.times_ms, dtype=np.float64)
        if t.ndim != 1:
            raise ValueError("times_ms must be 1-D")
        if sig.shape[-1] != t.shape[0]:
            raise ValueError(
                f"series has {sig.shape[-1]} samples but {t.shape[0]} times"
            )
        if np.any(np.diff(t) <= 0):
            raise ValueError("times_ms must be strictly increasing")
        if np.any(t < 0):
            raise ValueError("times_ms must be non-negative")
        if self.modality not in ("T1", "T2"):
            raise ValueError(f"modality must be 'T1' or 'T2', got {self.modality!r}")
        min_pts = 3 if self.modality == "T1" else 2
        if t.shape[0] < min_pts:
            raise ValueError(f"{self.modality} fitting needs >= {min_pts} samples")
        if np.any(sig < 0):
            raise ValueError("magnitude signals must be non-negative")
        object.__setattr__(self, "signals", sig)
        object.__setattr__(self, "times_ms", t)


@dataclass
class ParameterMap:
    """Fitted parameter values with per-voxel diagnostics.

    values: parameter in ms. aux: model amplitudes. residual: RMS
    model misfit per voxel. flags: see module FLAG_ constants.
    """

    values: np.ndarray
    aux: dict
    residual: np.ndarray
    flags: np.ndarray
    modality: str
    bounds: tuple


def _golden_max(fun, lo, hi, iters=_GOLDEN_ITERS):
    """Vectorized golden-section maximization over per-voxel brackets.

    fun maps an array of candidate parameters to per-voxel scores.
    lo/hi are per-voxel log-domain bracket edges.
    """
    a, b = lo.copy(), hi.copy()
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc = fun(np.exp(c))
    fd = fun(np.exp(d))
    for _ in range(iters):
        take_left = fc >= fd
        b = np.where(take_left, d, b)
        a = np.where(take_left, a, c)
        c_new = b - _INVPHI * (b - a)
        d_new = a + _INVPHI * (b - a)
        fc_new = np.where(take_left, fun(np.exp(c_new)), fc)
        fd_new = np.where(take_left, fd, fun(np.exp(d_new)))
        # keep already-evaluated interior points where possible
        fc_keep = np.where(take_left, fc_new, fd)
        fd_keep = np.where(take_left, fc, fd_new)
        c, d = c_new, d_new
        fc, fd = fc_keep, fd_keep
    mid = 0.5 * (a + b)
    return np.exp(mid)


def fit_t2(series):
    """Mono-exponential T2 fit of a T2-prepared magnitude series."""
    if series.modality != "T2":
        raise ValueError("fit_t2 requires a T2 series")
    sig = series.signals
    t = series.times_ms
    lead = sig.shape[:-1]
    flat = sig.reshape(-1, t.shape[0])
    n_vox = flat.shape[0]

    lo_ms, hi_ms, n_grid = _T2_GRID
    grid = np.geomspace(lo_ms, hi_ms, n_grid)

    # for fixed T2 the best amplitude is A = <s, e> / <e, e>, and the
    # residual is ||s||^2 - <s, e>^2 / <e, e>; maximizing the score
    # <s, e>^2 / <e, e> over T2 minimizes the residual
    e = np.exp(-t[None, :] / grid[:, None])
    num = flat @ e.T
    den = np.sum(e * e, axis=1)
    score = num**2 / den[None, :]
    best = np.argmax(score, axis=1)

    log_grid = np.log(grid)
    lo = log_grid[np.maximum(best - 1, 0)]
    hi = log_grid[np.minimum(best + 1, n_grid - 1)]

    def score_at(t2):
        ev = np.exp(-t[None, :] / t2[:, None])
        nv = np.sum(flat * ev, axis=1)
        dv = np.sum(ev * ev, axis=1)
        return nv**2 / dv

    t2 = _golden_max(score_at, lo, hi)

    at_hi = t2 >= hi_ms * (1.0 - 1e-9)
    t2 = np.where(at_hi, hi_ms, t2)

    ev = np.exp(-t[None, :] / t2[:, None])
    amp = np.sum(flat * ev, axis=1) / np.sum(ev * ev, axis=1)
    amp = np.maximum(amp, 0.0)
    resid = flat - amp[:, None] * ev
    rms = np.sqrt(np.mean(resid**2, axis=1))

    flags = np.full(n_vox, FLAG_OK, dtype=np.uint8)
    flags[at_hi] = FLAG_CLAMPED
    zero = np.max(flat, axis=1) == 0
    t2[zero] = 0.0
    amp[zero] = 0.0
    rms[zero] = 0.0
    flags[zero] = FLAG_ZERO

    peak = amp.max()
    m0 = amp / peak if peak > 0 else amp
    return ParameterMap(
        values=t2.reshape(lead),
        aux={"amplitude": amp.reshape(lead), "m0": m0.reshape(lead)},
        residual=rms.reshape(lead),
        flags=flags.reshape(lead),
        modality="T2",
        bounds=T2_BOUNDS_MS,
    )


def _t1_amplitudes(signed, e):
    """Closed-form least squares of s ~ A - B e per voxel and grid.

    signed: (V, n_t). e: (G, n_t). Returns A, B, resid2 of shape (V, G).
    """
    n_t = e.shape[1]
    se = np.sum(e, axis=1)
    see = np.sum(e * e, axis=1)
    det = n_t * see - se * se
    sy = np.sum(signed, axis=1)
    sye = signed @ e.T
    a = (see[None, :] * sy[:, None] - se[None, :] * sye) / det[None, :]
    b = (se[None, :] * sy[:, None] - n_t * sye) / det[None, :]
    syy = np.sum(signed * signed, axis=1)
    resid2 = (
        syy[:, None]
        + n_t * a * a
        + b * b * see[None, :]
        - 2.0 * a * sy[:, None]
        + 2.0 * b * sye
        - 2.0 * a * b * se[None, :]
    )
    return a, b, resid2


def fit_t1(series):
    """Inversion-recovery T1 fit with magnitude polarity restoration."""
    if series.modality != "T1":
        raise ValueError("fit_t1 requires a T1 series")
    sig = series.signals
    ti = series.times_ms
    lead = sig.shape[:-1]
    n_t = ti.shape[0]
    flat = sig.reshape(-1, n_t)
    n_vox = flat.shape[0]

    lo_ms, hi_ms, n_grid = _T1_STAR_GRID
    grid = np.geomspace(lo_ms, hi_ms, n_grid)
    e = np.exp(-ti[None, :] / grid[:, None])
    log_grid = np.log(grid)

    def _amplitudes_at(signed, t1s):
        """Closed-form (a, b, resid2) at one T1* per voxel."""
        ev = np.exp(-ti[None, :] / t1s[:, None])
        sev = np.sum(ev, axis=1)
        seev = np.sum(ev * ev, axis=1)
        det = n_t * seev - sev * sev
        sy = np.sum(signed, axis=1)
        sye = np.sum(signed * ev, axis=1)
        av = (seev * sy - sev * sye) / det
        bv = (sev * sy - n_t * sye) / det
        resid2 = np.sum((signed - av[:, None] + bv[:, None] * ev) ** 2, axis=1)
        return av, bv, resid2

    # if the signal never crosses zero inside the sampled range, the
    # unflipped and fully flipped patterns fit equally well with
    # amplitudes of opposite sign; ties prefer the physical solution
    # with positive amplitudes
    tie_tol = 1e-9 * np.sum(flat * flat, axis=1)

    best = None
    # polarity restoration: the first k samples (earliest inversion
    # times) may have negative true sign under the magnitude; each
    # candidate pattern is refined before the patterns are compared
    for k in range(n_t + 1):
        signed = flat.copy()
        signed[:, :k] *= -1.0
        _, _, resid2 = _t1_amplitudes(signed, e)
        idx = np.argmin(resid2, axis=1)
        lo = log_grid[np.maximum(idx - 1, 0)]
        hi = log_grid[np.minimum(idx + 1, n_grid - 1)]

        def score_at(t1s, signed=signed):
            return -_amplitudes_at(signed, t1s)[2]

        t1s_k = _golden_max(score_at, lo, hi)
        a_k, b_k, r_k = _amplitudes_at(signed, t1s_k)
        v_k = (a_k > 1e-12) & (b_k > 0) & np.isfinite(a_k) & np.isfinite(b_k)
        if best is None:
            best = [r_k, t1s_k, a_k, b_k, v_k]
        else:
            tie = np.abs(r_k - best[0]) <= tie_tol
            better = np.where(tie, v_k & ~best[4], r_k < best[0])
            for slot, new in zip(best, (r_k, t1s_k, a_k, b_k, v_k)):
                np.copyto(slot, new, where=better)

    resid2, t1_star, a, b, good = best

    flags = np.full(n_vox, FLAG_OK, dtype=np.uint8)
    t1 = np.zeros(n_vox)
    t1[good] = (b[good] / a[good] - 1.0) * t1_star[good]
    flags[~good] = FLAG_FALLBACK

    low, high = T1_BOUNDS_MS
    clamped = good & ((t1 < low) | (t1 > high))
    t1 = np.clip(t1, low, high)
    flags[clamped] = FLAG_CLAMPED

    rms = np.sqrt(np.maximum(resid2, 0.0) / n_t)
    zero = np.max(flat, axis=1) == 0
    t1[zero] = 0.0
    a[zero] = 0.0
    b[zero] = 0.0
    rms[zero] = 0.0
    flags[zero] = FLAG_ZERO

    return ParameterMap(
        values=t1.reshape(lead),
        aux={
            "a": a.reshape(lead),
            "b": b.reshape(lead),
            "t1_star": t1_star.reshape(lead),
        },
        residual=rms.reshape(lead),
        flags=flags.reshape(lead),
        modality="T1",
        bounds=T1_BOUNDS_MS,
    )


def fit_map(stack, times_ms, modality):
    """Fit a (contrast, y, x) complex or real stack voxelwise.

    The stack is reduced to magnitude images and fitted per voxel;
    returns a ParameterMap over the (y, x) grid.
    """
    stack = np.asarray(stack)
    if stack.ndim != 3:
        raise ValueError(f"stack must be (t, y, x), got {stack.shape}")
    mag = np.abs(stack).transpose(1, 2, 0)
    series = RelaxationSeries(mag, np.asarray(times_ms, dtype=np.float64), modality)
    return fit_t1(series) if modality == "T1" else fit_t2(series)
