import numpy as np
import pytest
from hypothesis import given, strategies as st

from trafficast.raster import (WHITE, RasterError, derasterize, grid_images, normalize_rows,
                               rasterize, rasterize_batch, read_pgm, resample, write_pgm)

unit_lists = st.lists(st.floats(0, 1), min_size=1, max_size=50)


def test_rasterize_examples():
    img = rasterize([0, 1, 0.5, 0.25], 4)
    assert img.column_positions.tolist() == [1, 4, 2, 1]
    for col, p in enumerate([1, 4, 2, 1]):
        assert img.pixels[p - 1, col] == WHITE
    assert rasterize(np.full(4, 0.5), 4).column_positions.tolist() == [2, 2, 2, 2]
    day = np.random.default_rng(0).random(288)
    big = rasterize(day, 288)
    assert big.pixels.shape == (288, 288)
    np.testing.assert_array_equal(big.column_positions, np.maximum(1, np.ceil(288 * day)))


def test_rasterize_rejects_out_of_range():
    with pytest.raises(RasterError):
        rasterize([0.2, 1.2], 4)
    with pytest.raises(RasterError):
        rasterize([], 4)


@given(unit_lists, st.integers(2, 64))
def test_one_white_pixel_per_column(x, r):
    px = rasterize(x, r).pixels.astype(int)
    assert np.all(px.sum(axis=0) == 255)
    assert set(np.unique(px)) <= {0, 255}


@given(st.lists(st.floats(0, 1), min_size=16, max_size=16))
def test_roundtrip_error_bound(x):
    x = np.array(x)
    assert np.max(np.abs(derasterize(rasterize(x, 16)) - x)) <= 1 / 16 + 1e-12


def test_roundtrip_random_batch():
    r = np.random.default_rng(1)
    for _ in range(1000):
        x = r.random(32)
        assert np.max(np.abs(derasterize(rasterize(x, 32)) - x)) <= 1 / 32


def test_derasterize_half_example():
    out = derasterize(rasterize([0.5, 0.5], 2))
    np.testing.assert_allclose(out, [0.25, 0.25])
    assert np.all(np.abs(out - 0.5) <= 0.5)


def test_derasterize_rejects_bad_columns():
    with pytest.raises(RasterError):
        derasterize(np.full((3, 3), 255, dtype=np.uint8))
    with pytest.raises(RasterError):
        derasterize(np.zeros((3, 3), dtype=np.uint8))


@given(st.lists(st.floats(0, 1), min_size=12, max_size=12))
def test_monotone_positions(x):
    x = np.array(x)
    p = rasterize(x, 12).column_positions
    for i in range(12):
        for j in range(12):
            if x[i] + 1 / 12 < x[j]:
                assert p[i] <= p[j]


@given(st.lists(st.floats(0, 1), min_size=10, max_size=10))
def test_vertical_flip_symmetry(x):
    x = np.array(x)
    r = 10
    if np.any(np.abs(r * x - np.round(r * x)) < 1e-9):
        return  # a value on a quantization boundary
    np.testing.assert_array_equal(rasterize(1 - x, r).pixels, rasterize(x, r).pixels[::-1])


def test_resample_identity_and_endpoints():
    x = np.array([3.0, 1.0, 4.0])
    np.testing.assert_array_equal(resample(x, 3), x)
    y = resample(x, 5)
    assert y.tolist() == [3.0, 2.0, 1.0, 2.5, 4.0]


def test_normalize_rows_constant_is_mid():
    out = normalize_rows([[5, 5, 5], [0, 5, 10]])
    assert out.tolist() == [[0.5] * 3, [0, 0.5, 1]]
    assert np.all(grid_images([[7.0] * 4], 4)[0].argmax(axis=0) + 1 == 2)


def test_batch_matches_single():
    rows = np.random.default_rng(2).random((5, 40))
    batch = rasterize_batch(rows, 16)
    for i in range(5):
        np.testing.assert_array_equal(batch[i], rasterize(rows[i], 16).pixels)


def test_pgm_format(tmp_path):
    img = rasterize([0, 1, 0.5, 0.25], 4)
    path = write_pgm(img, tmp_path / "a.pgm")
    data = path.read_bytes()
    header = b"P5\n4 4\n255\n"
    assert data.startswith(header) and len(data) == len(header) + 16
    grid = np.frombuffer(data[len(header):], dtype=np.uint8).reshape(4, 4)
    rows_from_top = [int(np.nonzero(grid[:, c])[0][0]) + 1 for c in range(4)]
    assert rows_from_top == [4, 1, 3, 4]
    np.testing.assert_array_equal(read_pgm(path), img.pixels)
