import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from heatcast.ingest import BoundingBox, IncidentRecord
from heatcast.raster import (
    GaussianSpec,
    GridSpec,
    HeatMap,
    export_pgm,
    export_png,
    import_pgm,
    make_kernel,
    rasterize_day,
    smooth,
)

BOX = BoundingBox(0.0, 8.0, 0.0, 8.0)
GRID = GridSpec(8, 8, BOX)


def naive_convolve(grid, kernel):
    """Zero-padded 'same' convolution written as four nested loops."""
    h, w = grid.shape
    r = kernel.shape[0] // 2
    out = np.zeros_like(grid)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    y, x = i - di, j - dj
                    if 0 <= y < h and 0 <= x < w:
                        acc += grid[y, x] * kernel[di + r, dj + r]
            out[i, j] = acc
    return out


def test_blank_day_is_all_zero():
    hm = rasterize_day(3, [], GRID)
    assert hm.day == 3 and hm.grid.shape == (8, 8)
    assert not hm.grid.any()
    assert not smooth(hm, GaussianSpec()).grid.any()


def test_single_incident_maps_to_255():
    hm = rasterize_day(1, [IncidentRecord(1, 4.5, 2.5)], GRID)
    assert hm.grid[3, 2] == 255.0
    assert np.count_nonzero(hm.grid) == 1


def test_two_to_one_ratio():
    recs = [IncidentRecord(1, 7.5, 0.5), IncidentRecord(1, 7.2, 0.1), IncidentRecord(1, 0.5, 7.5)]
    hm = rasterize_day(1, recs, GRID)
    assert hm.grid[0, 0] == 255.0
    assert hm.grid[7, 7] == 127.5


def test_cell_mapping_edges():
    assert GRID.cell(8.0, 0.0) == (0, 0)  # north-west corner
    assert GRID.cell(0.0, 8.0) == (7, 7)  # closed max edges fall in the last cell
    assert GRID.cell(4.0, 4.0) == (4, 4)


def test_grid_must_be_even():
    with pytest.raises(ValueError):
        GridSpec(7, 8, BOX)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 8), st.floats(0, 8)), min_size=1, max_size=25), st.randoms())
def test_rasterize_is_permutation_invariant(points, rnd):
    recs = [IncidentRecord(1, a, b) for a, b in points]
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    first = rasterize_day(1, recs, GRID).grid
    assert np.array_equal(first, rasterize_day(1, shuffled, GRID).grid)
    assert first.max() == 255.0


def test_kernel_examples():
    assert make_kernel(GaussianSpec(0.1))[1, 1] >= 0.999
    k = make_kernel(GaussianSpec(1.7))
    assert k.shape == (13, 13)
    assert abs(k.sum() - 1.0) <= 1e-9
    assert np.array_equal(k, k[::-1, :]) and np.array_equal(k, k[:, ::-1]) and np.array_equal(k, k.T)


def test_impulse_mass_preserved_before_rescale():
    grid = np.zeros((20, 20))
    grid[10, 10] = 200.0
    out = smooth(HeatMap(1, grid), GaussianSpec(1.5), rescale=False).grid
    assert abs(out.sum() - 200.0) <= 1e-9


def test_impulse_ratio_sigma_one():
    grid = np.zeros((12, 12))
    grid[6, 6] = 255.0
    out = smooth(HeatMap(1, grid), GaussianSpec(1.0)).grid
    assert out[6, 6] == 255.0
    expected = 255.0 * math.exp(-0.5)
    for r, c in [(5, 6), (7, 6), (6, 5), (6, 7)]:
        assert abs(out[r, c] - expected) <= 1e-9
    assert out[5, 6] == pytest.approx(154.7, abs=0.05)


@pytest.mark.parametrize("sigma", [0.7, 1.0, 1.5])
def test_smoothing_matches_quadruple_loop(sigma):
    rng = np.random.default_rng(int(sigma * 10))
    kernel = make_kernel(GaussianSpec(sigma))
    for _ in range(10):
        grid = rng.uniform(0, 255, (8, 8))
        fast = smooth(HeatMap(1, grid), GaussianSpec(sigma), rescale=False).grid
        assert np.max(np.abs(fast - naive_convolve(grid, kernel))) <= 1e-9


grids = arrays(np.float64, (6, 6), elements=st.floats(0, 100))


@settings(max_examples=50, deadline=None)
@given(grids, grids)
def test_smoothing_is_linear(a, b):
    spec = GaussianSpec(1.2)
    sa = smooth(HeatMap(1, a), spec, rescale=False).grid
    sb = smooth(HeatMap(1, b), spec, rescale=False).grid
    sab = smooth(HeatMap(1, a + b), spec, rescale=False).grid
    assert np.max(np.abs(sab - (sa + sb))) <= 1e-9


@settings(max_examples=50, deadline=None)
@given(grids)
def test_smoothed_peak_is_255_unless_blank(a):
    out = smooth(HeatMap(1, a), GaussianSpec(1.0)).grid
    if a.any():
        assert out.max() == 255.0
        assert out.min() >= 0.0
    else:
        assert not out.any()


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.floats(0, 255)), st.integers(0, 99999))
def test_pgm_round_trip_within_half(grid, day):
    hm = HeatMap(day, grid)
    back = import_pgm(export_pgm(hm))
    assert back.day == day
    assert back.grid.shape == grid.shape
    assert np.max(np.abs(back.grid - grid), initial=0.0) <= 0.5


def test_pgm_layout_and_integer_exactness():
    grid = np.array([[0.0, 1.0, 2.0], [253.0, 254.0, 255.0]])
    blob = export_pgm(HeatMap(7, grid))
    assert blob.startswith(b"P5\n")
    assert blob.endswith(bytes([0, 1, 2, 253, 254, 255]))
    assert np.array_equal(import_pgm(blob).grid, grid)


def test_pgm_rejects_other_formats():
    with pytest.raises(ValueError):
        import_pgm(b"P2\n1 1\n255\n0")
    with pytest.raises(ValueError):
        import_pgm(b"P5\n2 2\n255\n\x00")


def test_png_export(tmp_path):
    from PIL import Image

    grid = np.arange(16, dtype=float).reshape(4, 4) * 17
    export_png(HeatMap(1, grid), tmp_path / "x.png")
    with Image.open(tmp_path / "x.png") as img:
        assert img.mode == "L" and img.size == (4, 4)
        assert np.array_equal(np.asarray(img), grid.astype(np.uint8))


def test_heatmap_rejects_out_of_range():
    with pytest.raises(ValueError):
        HeatMap(1, np.full((2, 2), 256.0))
    with pytest.raises(ValueError):
        HeatMap(1, np.full((2, 2), -1.0))
