"""Pair discovery, target rescaling, and the subject split."""

import numpy as np
import pytest

from drums_trainer.archive import write_tensors
from drums_trainer.data import (
    PairingError,
    assemble,
    load_pair,
    scan_pairs,
    split_subjects,
)


def _basis_archive(path, rng, channels=4, grid=8, mean=None, std=None):
    prepared = rng.standard_normal((channels, grid, grid)).astype(np.float32)
    if mean is None:
        mean = rng.standard_normal(channels)
    if std is None:
        std = rng.uniform(0.5, 2.0, channels)
    zstats = np.stack([mean, std]).astype(np.float32)
    write_tensors(path, {"prepared": prepared, "zstats": zstats})
    return prepared, zstats


def _corpus(tmp_path, subjects, accelerations=(4, 8), with_full=True):
    rng = np.random.default_rng(0)
    for subject in subjects:
        rs = ((1,) if with_full else ()) + tuple(accelerations)
        for r in rs:
            name = f"{subject}_T1_lowrank_r{r:02d}_basis.tnsr"
            _basis_archive(tmp_path / name, rng)


class TestScan:
    def test_pairs_found(self, tmp_path):
        _corpus(tmp_path, ["subj00", "subj01"])
        pairs = scan_pairs(tmp_path)
        assert len(pairs) == 4
        assert sorted({p.subject for p in pairs}) == ["subj00", "subj01"]
        assert sorted({p.acceleration for p in pairs}) == [4, 8]
        for p in pairs:
            assert p.input_path.endswith(f"r{p.acceleration:02d}_basis.tnsr")
            assert p.target_path.endswith("r01_basis.tnsr")
            assert p.modality == "T1"

    def test_missing_counterpart(self, tmp_path):
        _corpus(tmp_path, ["subj00"], with_full=False)
        with pytest.raises(PairingError, match="counterpart"):
            scan_pairs(tmp_path)

    def test_two_fully_sampled_archives(self, tmp_path):
        rng = np.random.default_rng(0)
        # same subject and modality through two methods: ambiguous target
        _basis_archive(tmp_path / "subj00_T1_lowrank_r01_basis.tnsr", rng)
        _basis_archive(tmp_path / "subj00_T1_drums_r01_basis.tnsr", rng)
        _basis_archive(tmp_path / "subj00_T1_lowrank_r04_basis.tnsr", rng)
        with pytest.raises(PairingError, match="fully sampled"):
            scan_pairs(tmp_path)

    def test_orphan_full_ignored(self, tmp_path):
        _corpus(tmp_path, ["subj00"])
        rng = np.random.default_rng(1)
        _basis_archive(tmp_path / "subj09_T1_lowrank_r01_basis.tnsr", rng)
        pairs = scan_pairs(tmp_path)
        assert {p.subject for p in pairs} == {"subj00"}

    def test_unrelated_files_ignored(self, tmp_path):
        _corpus(tmp_path, ["subj00"])
        (tmp_path / "subj00_T1_lowrank_r04.tnsr").write_bytes(b"not a basis")
        (tmp_path / "subj00_T1_lowrank_r04_convergence.csv").write_text("x\n")
        (tmp_path / "notes.txt").write_text("x\n")
        assert len(scan_pairs(tmp_path)) == 2

    def test_modalities_kept_apart(self, tmp_path):
        rng = np.random.default_rng(2)
        _basis_archive(tmp_path / "subj00_T1_lowrank_r01_basis.tnsr", rng)
        _basis_archive(tmp_path / "subj00_T2_lowrank_r01_basis.tnsr", rng)
        _basis_archive(tmp_path / "subj00_T1_lowrank_r04_basis.tnsr", rng)
        _basis_archive(tmp_path / "subj00_T2_lowrank_r08_basis.tnsr", rng)
        pairs = scan_pairs(tmp_path)
        assert len(pairs) == 2
        by_mod = {p.modality: p for p in pairs}
        assert "T1" in by_mod["T1"].target_path
        assert "T2" in by_mod["T2"].target_path

    def test_missing_directory(self, tmp_path):
        with pytest.raises(PairingError):
            scan_pairs(tmp_path / "absent")


class TestLoadPair:
    def test_target_moves_to_input_frame(self, tmp_path):
        rng = np.random.default_rng(3)
        x_prep, x_stats = _basis_archive(
            tmp_path / "s_T1_lowrank_r08_basis.tnsr", rng)
        t_prep, t_stats = _basis_archive(
            tmp_path / "s_T1_lowrank_r01_basis.tnsr", rng)
        (pair,) = scan_pairs(tmp_path)
        x, y = load_pair(pair)
        assert x.dtype == np.float32 and y.dtype == np.float32
        assert np.array_equal(x, x_prep)
        t64 = t_prep.astype(np.float64)
        physical = t64 * t_stats[1][:, None, None] + t_stats[0][:, None, None]
        want = (physical - x_stats[0][:, None, None]) / x_stats[1][:, None, None]
        assert np.max(np.abs(y - want)) < 1e-6

    def test_identical_stats_leave_target_alone(self, tmp_path):
        rng = np.random.default_rng(4)
        mean = np.zeros(4)
        std = np.ones(4)
        _basis_archive(tmp_path / "s_T1_lowrank_r08_basis.tnsr", rng,
                       mean=mean, std=std)
        t_prep, _ = _basis_archive(tmp_path / "s_T1_lowrank_r01_basis.tnsr",
                                   rng, mean=mean, std=std)
        (pair,) = scan_pairs(tmp_path)
        _, y = load_pair(pair)
        assert np.max(np.abs(y - t_prep)) < 1e-6

    def test_shape_mismatch(self, tmp_path):
        rng = np.random.default_rng(5)
        _basis_archive(tmp_path / "s_T1_lowrank_r08_basis.tnsr", rng, grid=8)
        _basis_archive(tmp_path / "s_T1_lowrank_r01_basis.tnsr", rng, grid=16)
        (pair,) = scan_pairs(tmp_path)
        with pytest.raises(PairingError, match="shapes differ"):
            load_pair(pair)

    def test_missing_entry(self, tmp_path):
        rng = np.random.default_rng(6)
        _basis_archive(tmp_path / "s_T1_lowrank_r01_basis.tnsr", rng)
        write_tensors(
            tmp_path / "s_T1_lowrank_r08_basis.tnsr",
            {"prepared": rng.standard_normal((4, 8, 8)).astype(np.float32)},
        )
        (pair,) = scan_pairs(tmp_path)
        with pytest.raises(PairingError, match="zstats"):
            load_pair(pair)


class TestSplit:
    def test_proportions(self):
        subjects = [f"subj{i:02d}" for i in range(20)]
        train, val, test = split_subjects(subjects, seed=0)
        assert len(train) == 16 and len(val) == 2 and len(test) == 2
        assert sorted(train + val + test) == subjects
        assert not (set(train) & set(val) | set(train) & set(test)
                    | set(val) & set(test))

    def test_deterministic(self):
        subjects = [f"s{i}" for i in range(12)]
        assert split_subjects(subjects, seed=7) == split_subjects(subjects, seed=7)
        assert split_subjects(subjects, seed=7) != split_subjects(subjects, seed=8)

    def test_order_insensitive(self):
        subjects = [f"s{i}" for i in range(9)]
        shuffled = list(reversed(subjects))
        assert split_subjects(subjects, seed=1) == split_subjects(shuffled, seed=1)

    def test_minimum(self):
        train, val, test = split_subjects(["a", "b", "c"], seed=0)
        assert len(train) == len(val) == len(test) == 1
        with pytest.raises(PairingError):
            split_subjects(["a", "b"], seed=0)


class TestAssemble:
    def test_stacks_selected_subjects(self, tmp_path):
        _corpus(tmp_path, ["subj00", "subj01", "subj02"])
        pairs = scan_pairs(tmp_path)
        x, y = assemble(pairs, ["subj00", "subj02"])
        assert x.shape == (4, 4, 8, 8)
        assert y.shape == (4, 4, 8, 8)
        assert x.dtype == np.float32 and y.dtype == np.float32

    def test_no_pairs(self, tmp_path):
        _corpus(tmp_path, ["subj00"])
        pairs = scan_pairs(tmp_path)
        with pytest.raises(PairingError):
            assemble(pairs, ["subj99"])
