"""Casorati factorization, truncation optimality, basis preparation."""

import numpy as np
import numpy.testing as npt
import pytest

from drums.subspace import (
    decompose,
    load_basis,
    merge_refined,
    prepare_basis,
    reconstruct,
    save_basis,
    truncate,
)
from drums.tensor_io import ArchiveError


def random_stack(rng, nt=9, ny=24, nx=24):
    return rng.standard_normal((nt, ny, nx)) + 1j * rng.standard_normal((nt, ny, nx))


def low_rank_stack(rng, rank, nt=9, ny=24, nx=24):
    c = rng.standard_normal((rank, ny, nx)) + 1j * rng.standard_normal((rank, ny, nx))
    t = rng.standard_normal((rank, nt)) + 1j * rng.standard_normal((rank, nt))
    return np.einsum("lyx,lt->tyx", c, t)


class TestDecompose:
    def test_full_rank_reconstruction_exact(self):
        rng = np.random.default_rng(0)
        x = random_stack(rng, nt=5)
        b = decompose(x, 5)
        npt.assert_allclose(reconstruct(b), x, atol=1e-10 * np.abs(x).max())

    def test_exact_on_low_rank_input(self):
        rng = np.random.default_rng(1)
        x = low_rank_stack(rng, rank=3, nt=9)
        b = decompose(x, 3)
        npt.assert_allclose(reconstruct(b), x, atol=1e-9 * np.abs(x).max())

    def test_temporal_rows_orthonormal(self):
        rng = np.random.default_rng(2)
        b = decompose(random_stack(rng), 4)
        gram = b.temporal @ b.temporal.conj().T
        npt.assert_allclose(gram, np.eye(4), atol=1e-10)

    def test_spatial_images_orthonormal(self):
        rng = np.random.default_rng(3)
        b = decompose(random_stack(rng), 4)
        flat = b.spatial.reshape(4, -1)
        gram = flat @ flat.conj().T
        npt.assert_allclose(gram, np.eye(4), atol=1e-10)

    def test_singular_values_descending(self):
        rng = np.random.default_rng(4)
        b = decompose(random_stack(rng), 6)
        assert np.all(np.diff(b.singular_values) <= 1e-12)

    def test_eckart_young_truncation_error(self):
        # the rank-L residual equals the l2 norm of the dropped
        # singular values, and no other rank-L factorization beats it
        rng = np.random.default_rng(5)
        x = random_stack(rng, nt=8)
        full = decompose(x, 8)
        for rank in (1, 3, 5):
            b = truncate(full, rank)
            err = np.linalg.norm(x - reconstruct(b))
            tail = np.linalg.norm(full.singular_values[rank:])
            assert abs(err - tail) <= 1e-6 * max(tail, 1.0)
            # any random competing rank-L factorization is no better
            for seed in range(3):
                r2 = np.random.default_rng(seed)
                competitor = low_rank_stack(r2, rank, nt=8)
                assert np.linalg.norm(x - competitor) >= err - 1e-9

    def test_phase_convention_deterministic(self):
        rng = np.random.default_rng(6)
        x = random_stack(rng)
        b1 = decompose(x, 3)
        # a global phase on the input must not flip component phases
        # arbitrarily: the largest temporal entry is real positive
        for l in range(3):
            j = np.argmax(np.abs(b1.temporal[l]))
            val = b1.temporal[l, j]
            assert abs(val.imag) <= 1e-12 * abs(val)
            assert val.real > 0

    def test_rank_bounds_checked(self):
        rng = np.random.default_rng(7)
        x = random_stack(rng, nt=4)
        with pytest.raises(ValueError):
            decompose(x, 5)
        with pytest.raises(ValueError):
            decompose(x, 0)


class TestTruncate:
    def test_same_rank_is_identity(self):
        rng = np.random.default_rng(8)
        b = decompose(random_stack(rng), 4)
        t = truncate(b, 4)
        npt.assert_array_equal(t.spatial, b.spatial)
        npt.assert_array_equal(t.temporal, b.temporal)
        npt.assert_array_equal(t.singular_values, b.singular_values)

    def test_truncate_then_reconstruct_matches_fresh_decompose(self):
        rng = np.random.default_rng(9)
        x = random_stack(rng)
        a = reconstruct(truncate(decompose(x, 6), 2))
        b = reconstruct(decompose(x, 2))
        npt.assert_allclose(a, b, atol=1e-9 * np.abs(x).max())


class TestPreparedBasis:
    def test_channel_layout_and_zscore(self):
        rng = np.random.default_rng(10)
        x = random_stack(rng, ny=192, nx=192)
        b = decompose(x, 3)
        p = prepare_basis(b)
        assert p.channels.shape == (6, 128, 128)
        assert p.channels.dtype == np.float32
        means = p.channels.mean(axis=(1, 2))
        stds = p.channels.std(axis=(1, 2))
        npt.assert_allclose(means, 0.0, atol=1e-4)
        npt.assert_allclose(stds, 1.0, atol=1e-3)

    def test_center_crop_window(self):
        rng = np.random.default_rng(11)
        x = random_stack(rng, ny=192, nx=192)
        b = decompose(x, 2)
        p = prepare_basis(b)
        assert p.crop_offset == (32, 32)
        assert p.pad == (0, 0)
        # undo z-score by hand and compare against the dephased window
        l = 0
        window = b.spatial[l, 32:160, 32:160] * np.exp(-1j * p.phases[l])
        re = p.channels[0].astype(np.float64) * p.std[0] + p.mean[0]
        npt.assert_allclose(re, window.real, atol=1e-5)

    def test_small_grid_padded(self):
        rng = np.random.default_rng(12)
        x = random_stack(rng, ny=96, nx=96)
        b = decompose(x, 2)
        p = prepare_basis(b)
        assert p.channels.shape == (4, 128, 128)
        assert p.pad == (32, 32)

    def test_roundtrip_without_refinement(self):
        rng = np.random.default_rng(13)
        for ny in (96, 128, 192):
            x = random_stack(rng, ny=ny, nx=ny)
            b = decompose(x, 3)
            merged = merge_refined(b, prepare_basis(b))
            scale = np.abs(b.spatial).max()
            npt.assert_allclose(merged.spatial, b.spatial, atol=2e-6 * scale)
            npt.assert_allclose(
                reconstruct(merged), reconstruct(b),
                atol=2e-5 * np.abs(x).max(),
            )

    def test_dephased_mean_phase_near_zero(self):
        rng = np.random.default_rng(14)
        x = random_stack(rng, ny=64, nx=64)
        b = decompose(x, 2)
        p = prepare_basis(b)
        for l in range(2):
            dephased = b.spatial[l] * np.exp(-1j * p.phases[l])
            assert abs(np.angle(dephased.sum())) < 1e-10

    def test_rank_mismatch_rejected(self):
        rng = np.random.default_rng(15)
        x = random_stack(rng, ny=64, nx=64)
        b3 = decompose(x, 3)
        p2 = prepare_basis(decompose(x, 2))
        with pytest.raises(ValueError):
            merge_refined(b3, p2)

    def test_refinement_outside_crop_untouched(self):
        rng = np.random.default_rng(16)
        x = random_stack(rng, ny=192, nx=192)
        b = decompose(x, 2)
        p = prepare_basis(b)
        altered = prepare_basis(b)
        altered.channels[:] = 0.0
        merged = merge_refined(b, altered)
        outside = np.ones((192, 192), dtype=bool)
        outside[32:160, 32:160] = False
        npt.assert_allclose(
            merged.spatial[:, outside], b.spatial[:, outside], atol=1e-12
        )
        inside_change = np.abs(merged.spatial[:, ~outside] - b.spatial[:, ~outside])
        assert inside_change.max() > 0


class TestBasisArchive:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(17)
        x = random_stack(rng, ny=192, nx=192)
        b = decompose(x, 3)
        p = prepare_basis(b)
        path = str(tmp_path / "basis.tnsr")
        save_basis(path, b, p)
        b2, p2 = load_basis(path)

        assert b2.rank == 3
        scale = np.abs(b.spatial).max()
        # storage is 32 bit, so round trips are float32-exact only
        npt.assert_allclose(b2.spatial, b.spatial, atol=1e-6 * scale)
        npt.assert_allclose(b2.temporal, b.temporal, atol=1e-6)
        npt.assert_allclose(b2.singular_values, b.singular_values,
                            rtol=1e-6)
        npt.assert_array_equal(p2.channels, p.channels)
        npt.assert_allclose(p2.phases, p.phases, atol=1e-6)
        npt.assert_allclose(p2.mean, p.mean, rtol=1e-5, atol=1e-9)
        npt.assert_allclose(p2.std, p.std, rtol=1e-6)
        assert p2.crop_offset == p.crop_offset
        assert p2.pad == p.pad
        assert p2.grid == p.grid

    def test_loaded_basis_recombines(self, tmp_path):
        rng = np.random.default_rng(18)
        x = low_rank_stack(rng, rank=3, ny=160, nx=160)
        b = decompose(x, 3)
        path = str(tmp_path / "basis.tnsr")
        save_basis(path, b, prepare_basis(b))
        b2, p2 = load_basis(path)
        merged = merge_refined(b2, p2)
        npt.assert_allclose(reconstruct(merged), x, atol=1e-4 * np.abs(x).max())

    def test_small_grid_pad_recovered(self, tmp_path):
        rng = np.random.default_rng(19)
        x = random_stack(rng, ny=32, nx=32)
        b = decompose(x, 2)
        p = prepare_basis(b)
        assert p.pad == (96, 96)
        path = str(tmp_path / "basis.tnsr")
        save_basis(path, b, p)
        _, p2 = load_basis(path)
        assert p2.pad == p.pad
        assert p2.crop_offset == p.crop_offset

    def test_rank_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(20)
        x = random_stack(rng, ny=64, nx=64)
        b3 = decompose(x, 3)
        p2 = prepare_basis(decompose(x, 2))
        with pytest.raises(ValueError):
            save_basis(str(tmp_path / "b.tnsr"), b3, p2)

    def test_missing_entry_rejected(self, tmp_path):
        from drums.tensor_io import Tensor, as_real32, write_archive

        path = str(tmp_path / "bad.tnsr")
        write_archive(path, [Tensor("C", as_real32(np.zeros((1, 4, 4))))])
        with pytest.raises(ArchiveError):
            load_basis(path)
