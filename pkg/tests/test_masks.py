"""Mask-stream contracts: reproducibility, mean-field behavior, soft OR."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from percept_xai.masks import (
    MaskConfig,
    enumerate_masks,
    make_mask,
    mask_from_grid,
    resolved_upsample_factor,
    sample_low_res,
    texture_mask,
)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            MaskConfig(keep_prob=0.0)
        with pytest.raises(ValueError):
            MaskConfig(keep_prob=1.0)
        with pytest.raises(ValueError):
            MaskConfig(num_masks=0)
        with pytest.raises(ValueError):
            MaskConfig(cell_rows=0)
        with pytest.raises(ValueError):
            MaskConfig(upsample="bilinear")

    def test_auto_factor_leaves_crop_slack(self):
        config = MaskConfig(cell_rows=7, cell_cols=7)
        factor = resolved_upsample_factor(config, 224, 224)
        assert 7 * factor >= 224 + factor

    def test_explicit_factor_must_cover_target(self):
        config = MaskConfig(cell_rows=2, cell_cols=2, upsample_factor=4)
        assert resolved_upsample_factor(config, 8, 8) == 4
        with pytest.raises(ValueError, match="smaller than target"):
            resolved_upsample_factor(config, 9, 9)


class TestSampleLowRes:
    def test_same_seed_index_is_identical(self):
        config = MaskConfig(cell_rows=5, cell_cols=5, num_masks=10, seed=123)
        np.testing.assert_array_equal(sample_low_res(config, 3), sample_low_res(config, 3))

    def test_different_indices_differ(self):
        config = MaskConfig(cell_rows=7, cell_cols=7, num_masks=10, seed=123)
        assert not np.array_equal(sample_low_res(config, 0), sample_low_res(config, 1))

    def test_near_zero_probability_gives_empty_grids(self):
        config = MaskConfig(cell_rows=7, cell_cols=7, keep_prob=1e-9, num_masks=20, seed=0)
        for index in range(20):
            assert sample_low_res(config, index).sum() == 0

    def test_cell_frequency_matches_probability(self):
        config = MaskConfig(cell_rows=7, cell_cols=7, keep_prob=0.5, num_masks=10_000, seed=7)
        total = np.zeros((7, 7))
        for index in range(10_000):
            total += sample_low_res(config, index)
        mean = total / 10_000
        assert mean.min() >= 0.48 and mean.max() <= 0.52

    def test_index_out_of_range(self):
        config = MaskConfig(num_masks=5)
        with pytest.raises(IndexError):
            sample_low_res(config, 5)
        with pytest.raises(IndexError):
            make_mask(config, -1, 224, 224)

    def test_values_are_binary(self):
        config = MaskConfig(cell_rows=6, cell_cols=4, num_masks=3, seed=2)
        assert set(np.unique(sample_low_res(config, 1))) <= {0.0, 1.0}


class TestMakeMask:
    def test_all_ones_grid_gives_all_ones_mask(self):
        config = MaskConfig(cell_rows=3, cell_cols=3, num_masks=1, seed=0)
        grid = np.ones((3, 3))
        mask = mask_from_grid(grid, config, 32, 32, np.random.default_rng(0))
        np.testing.assert_allclose(mask, 1.0, atol=1e-12)

    def test_all_zeros_grid_gives_all_zeros_mask(self):
        config = MaskConfig(cell_rows=3, cell_cols=3, num_masks=1, seed=0)
        grid = np.zeros((3, 3))
        mask = mask_from_grid(grid, config, 32, 32, np.random.default_rng(0))
        np.testing.assert_allclose(mask, 0.0, atol=1e-12)

    def test_values_stay_in_unit_interval(self):
        config = MaskConfig(cell_rows=4, cell_cols=4, num_masks=50, seed=9)
        for index in range(50):
            mask = make_mask(config, index, 40, 40)
            assert mask.min() >= 0.0 and mask.max() <= 1.0

    def test_uses_grid_from_sample_low_res(self):
        # Forcing the same per-index generator, the mask's source grid is the
        # published low-res grid.
        config = MaskConfig(cell_rows=3, cell_cols=3, keep_prob=0.7, num_masks=4, seed=5,
                            upsample="nearest", upsample_factor=4)
        for index in range(4):
            grid = sample_low_res(config, index)
            mask = make_mask(config, index, 8, 8)
            # nearest upsample of the grid, arbitrary 8x8 crop of the 12x12 field
            blocks = np.repeat(np.repeat(grid, 4, axis=0), 4, axis=1)
            windows = [
                blocks[r : r + 8, c : c + 8]
                for r in range(5)
                for c in range(5)
            ]
            assert any(np.array_equal(mask, w) for w in windows)

    def test_full_stream_reproducible_bit_for_bit(self):
        config = MaskConfig(cell_rows=4, cell_cols=4, num_masks=25, seed=11)
        first = [make_mask(config, i, 30, 30) for i in range(25)]
        second = [make_mask(config, i, 30, 30) for i in reversed(range(25))][::-1]
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_mean_field_converges_to_keep_prob(self):
        n = 2000
        config = MaskConfig(cell_rows=7, cell_cols=7, keep_prob=0.5, num_masks=n, seed=3)
        total = np.zeros((64, 64))
        for index in range(n):
            total += make_mask(config, index, 64, 64)
        mean = total / n
        tolerance = 3.0 / np.sqrt(n)
        within = np.abs(mean - 0.5) <= tolerance
        assert within.mean() >= 0.99


class TestEnumerateMasks:
    def test_weights_sum_to_one_and_masks_are_exact(self):
        config = MaskConfig(cell_rows=2, cell_cols=2, keep_prob=0.3, num_masks=1,
                            upsample="nearest", upsample_factor=4)
        pairs = list(enumerate_masks(config, 8, 8))
        assert len(pairs) == 16
        assert abs(sum(w for w, _ in pairs) - 1.0) < 1e-12
        for _w, mask in pairs:
            assert mask.shape == (8, 8)
            assert set(np.unique(mask)) <= {0.0, 1.0}

    def test_requires_exact_target(self):
        config = MaskConfig(cell_rows=2, cell_cols=2, upsample="nearest", upsample_factor=5)
        with pytest.raises(ValueError, match="equal the target"):
            list(enumerate_masks(config, 8, 8))

    def test_rejects_intractable_grids(self):
        config = MaskConfig(cell_rows=6, cell_cols=6, upsample="nearest", upsample_factor=2)
        with pytest.raises(ValueError, match="not tractable"):
            list(enumerate_masks(config, 12, 12))


class TestTextureMask:
    def test_zero_edges_leave_mask_unchanged(self):
        m = np.random.default_rng(0).random((8, 8))
        np.testing.assert_array_equal(texture_mask(m, np.zeros((8, 8))), m)

    def test_full_edges_give_all_ones(self):
        m = np.random.default_rng(0).random((8, 8))
        np.testing.assert_array_equal(texture_mask(m, np.ones((8, 8))), np.ones((8, 8)))

    def test_binary_inputs_reduce_to_logical_or(self):
        rng = np.random.default_rng(4)
        m = (rng.random((10, 10)) < 0.5).astype(float)
        e = (rng.random((10, 10)) < 0.5).astype(float)
        np.testing.assert_array_equal(texture_mask(m, e), np.logical_or(m, e).astype(float))

    def test_accepts_channel_replicated_edge_maps(self):
        m = np.zeros((4, 4))
        edges = np.ones((4, 4, 3))
        np.testing.assert_array_equal(texture_mask(m, edges), np.ones((4, 4)))

    @given(st.integers(0, 500))
    @settings(max_examples=25, deadline=None)
    def test_result_dominates_both_inputs(self, seed):
        rng = np.random.default_rng(seed)
        m, e = rng.random((6, 6)), rng.random((6, 6))
        out = texture_mask(m, e)
        assert (out >= m).all() and (out >= e).all()

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            texture_mask(np.zeros((4, 4)), np.zeros((5, 5)))
