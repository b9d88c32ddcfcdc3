"""Domain type construction, validation, and grayscale conversion."""

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sunshadow.core import (
    GRAY_WEIGHTS,
    ImageSequence,
    LabelMaskSet,
    LightingTable,
    ShadowVolume,
    to_grayscale,
)
from sunshadow.errors import DataError, DimensionMismatchError, TimestampOrderError

from conftest import pixel_sequence


def color_sequence(pixels_rgb):
    """One frame of RGB pixels on a 1 x p grid."""
    arr = np.asarray(pixels_rgb, dtype=np.float64)[None, :, :]
    return ImageSequence(
        frames=arr,
        timestamps=[datetime(2013, 6, 1, 12, tzinfo=timezone.utc)],
        latitude=38.63,
        longitude=-90.20,
        sky_mask=np.ones((1, arr.shape[1]), dtype=bool),
    )


class TestToGrayscale:
    def test_white_maps_to_max(self):
        gray = to_grayscale(color_sequence([[255.0, 255.0, 255.0]]))
        assert gray.frames[0, 0] == pytest.approx(255.0)

    def test_black_maps_to_min(self):
        gray = to_grayscale(color_sequence([[0.0, 0.0, 0.0]]))
        assert gray.frames[0, 0] == 0.0

    def test_bt601_weights(self):
        # 0.299*100 + 0.587*200 + 0.114*50 = 29.9 + 117.4 + 5.7
        gray = to_grayscale(color_sequence([[100.0, 200.0, 50.0]]))
        assert gray.frames[0, 0] == pytest.approx(153.0, abs=1e-12)

    def test_idempotent_on_grayscale(self):
        seq = pixel_sequence([[10.0, 20.0]])
        again = to_grayscale(seq)
        assert again.is_grayscale
        np.testing.assert_array_equal(again.frames, seq.frames)

    @given(
        st.lists(
            st.tuples(
                st.floats(0, 255, allow_nan=False),
                st.floats(0, 255, allow_nan=False),
                st.floats(0, 255, allow_nan=False),
            ),
            min_size=1,
            max_size=16,
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_range_preserved(self, pixels):
        gray = to_grayscale(color_sequence(pixels))
        assert gray.frames.min() >= 0.0
        assert gray.frames.max() <= 255.0 + 1e-9

    def test_weights_sum_to_one(self):
        assert GRAY_WEIGHTS.sum() == pytest.approx(1.0)


class TestImageSequence:
    def test_nonmonotone_timestamps_rejected(self):
        base = datetime(2013, 1, 1, tzinfo=timezone.utc)
        with pytest.raises(TimestampOrderError):
            pixel_sequence(np.zeros((2, 1)), times=[base, base])

    def test_pixel_count_must_match_mask(self):
        with pytest.raises(DimensionMismatchError):
            ImageSequence(
                frames=np.zeros((1, 3)),
                timestamps=[datetime(2013, 1, 1, tzinfo=timezone.utc)],
                latitude=0.0,
                longitude=0.0,
                sky_mask=np.ones((1, 2), dtype=bool),
            )

    def test_negative_intensity_rejected(self):
        with pytest.raises(DataError):
            pixel_sequence([[-1.0]])

    def test_bad_latitude_rejected(self):
        with pytest.raises(DataError):
            pixel_sequence([[0.0]], lat=91.0)

    def test_values_above_255_allowed_in_memory(self):
        # Saturation repair writes intensities above 255; the type accepts them.
        seq = pixel_sequence([[300.0]])
        assert seq.frames[0, 0] == 300.0

    def test_to_grid_scatters_and_fills(self):
        mask = np.array([[True, False], [False, True]])
        seq = ImageSequence(
            frames=np.array([[1.0, 2.0]]),
            timestamps=[datetime(2013, 1, 1, tzinfo=timezone.utc)],
            latitude=0.0,
            longitude=0.0,
            sky_mask=mask,
        )
        grid = seq.to_grid(np.array([5.0, 7.0]))
        assert grid[0, 0] == 5.0 and grid[1, 1] == 7.0
        assert np.isnan(grid[0, 1]) and np.isnan(grid[1, 0])

    def test_pixel_coordinates_row_major(self):
        mask = np.array([[True, True], [True, False]])
        seq = ImageSequence(
            frames=np.zeros((1, 3)),
            timestamps=[datetime(2013, 1, 1, tzinfo=timezone.utc)],
            latitude=0.0,
            longitude=0.0,
            sky_mask=mask,
        )
        np.testing.assert_array_equal(
            seq.pixel_coordinates(), [[0, 0], [0, 1], [1, 0]]
        )


class TestOtherTypes:
    def test_shadow_labels_must_be_binary(self):
        with pytest.raises(DataError):
            ShadowVolume(
                labels=np.array([[2]], dtype=np.uint8),
                converged=np.zeros(1, dtype=bool),
                sky_mask=np.ones((1, 1), dtype=bool),
            )

    def test_lighting_table_requires_unit_vectors(self):
        with pytest.raises(DataError):
            LightingTable(
                directions=np.array([[1.0, 1.0, 0.0]]),
                above_horizon=np.array([True]),
            )

    def test_label_masks_reject_bad_codes(self):
        with pytest.raises(DataError):
            LabelMaskSet(masks={0: np.full((2, 2), 7, dtype=np.int8)})

    def test_label_masks_reject_mixed_shapes(self):
        with pytest.raises(DimensionMismatchError):
            LabelMaskSet(
                masks={0: np.zeros((2, 2), dtype=np.int8), 1: np.zeros((3, 2), dtype=np.int8)}
            )
