"""Training pairs from stored basis archives.

The reconstruction CLI leaves one basis archive per (subject,
modality, acceleration) named

    {subject}_{modality}_{method}_r{RR}_basis.tnsr

`r01` holds the fully sampled run; every `r > 1` archive pairs with
the `r01` archive of the same subject and modality. The network input
is the undersampled prepared tensor as stored (already z-scored); the
target is the fully sampled basis re-expressed in the input's z-score
frame, because that is the frame in which the refined output is
un-standardized during reconstruction.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from .archive import read_tensors

_BASIS_RE = re.compile(
    r"^(?P<subject>.+)_(?P<modality>T[12])_(?P<method>[a-z]+)_r(?P<r>\d{2})_basis\.tnsr$"
)


class PairingError(Exception):
    """Basis archives cannot be assembled into training pairs."""


@dataclass(frozen=True)
class PairRecord:
    subject: str
    modality: str
    acceleration: int
    input_path: str
    target_path: str


def scan_pairs(data_dir):
    """Match undersampled basis archives with their fully sampled
    counterparts. Every undersampled archive must have one; orphan
    fully sampled archives are ignored.
    """
    if not os.path.isdir(data_dir):
        raise PairingError(f"no such directory: {data_dir}")
    fulls = {}
    unders = []
    for fname in sorted(os.listdir(data_dir)):
        m = _BASIS_RE.match(fname)
        if not m:
            continue
        key = (m.group("subject"), m.group("modality"))
        r = int(m.group("r"))
        path = os.path.join(data_dir, fname)
        if r == 1:
            if key in fulls:
                raise PairingError(f"two fully sampled archives for {key}")
            fulls[key] = path
        else:
            unders.append((key, r, path))
    pairs = []
    for key, r, path in unders:
        if key not in fulls:
            raise PairingError(
                f"no fully sampled counterpart for {os.path.basename(path)}"
            )
        pairs.append(PairRecord(key[0], key[1], r, path, fulls[key]))
    return pairs


def _prepared(path):
    entries = read_tensors(path)
    for key in ("prepared", "zstats"):
        if key not in entries:
            raise PairingError(f"{path}: missing entry {key!r}")
    prepared = entries["prepared"]
    zstats = entries["zstats"].astype(np.float64)
    if prepared.ndim != 3:
        raise PairingError(f"{path}: prepared tensor must be 3-D")
    if zstats.shape != (2, prepared.shape[0]):
        raise PairingError(f"{path}: zstats shape {zstats.shape} is invalid")
    return prepared, zstats[0], zstats[1]


def load_pair(record):
    """(input, target) float32 channel tensors for one pair.

    Both live in the input's z-score frame; the target is unscaled
    from its own frame first.
    """
    x, x_mean, x_std = _prepared(record.input_path)
    t, t_mean, t_std = _prepared(record.target_path)
    if x.shape != t.shape:
        raise PairingError(
            f"pair {record.subject}/{record.modality}: shapes differ "
            f"{x.shape} vs {t.shape}"
        )
    physical = t.astype(np.float64) * t_std[:, None, None] + t_mean[:, None, None]
    y = (physical - x_mean[:, None, None]) / x_std[:, None, None]
    return x, y.astype(np.float32)


def split_subjects(subjects, seed=0):
    """Deterministic train/val/test split, 10:1:1 by subject."""
    subjects = sorted(set(subjects))
    if len(subjects) < 3:
        raise PairingError("need at least 3 subjects to split")
    rng = np.random.default_rng(seed)
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    n = len(order)
    n_val = max(1, round(n / 12))
    n_test = max(1, round(n / 12))
    test = sorted(order[:n_test])
    val = sorted(order[n_test : n_test + n_val])
    train = sorted(order[n_test + n_val :])
    return train, val, test


def assemble(pairs, subjects):
    """Stack the pairs of the given subjects into (inputs, targets)."""
    chosen = [p for p in pairs if p.subject in set(subjects)]
    if not chosen:
        raise PairingError("no pairs for the requested subjects")
    xs, ys = [], []
    for record in chosen:
        x, y = load_pair(record)
        xs.append(x)
        ys.append(y)
    return np.stack(xs), np.stack(ys)
