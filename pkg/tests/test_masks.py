import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edibert import _kernels
from edibert.masks import (
    LatentEditSet,
    chebyshev_distance_to_edit,
    dilate,
    downsample_mask,
    gaussian_soft_mask,
    peel_layers,
    random_order,
    sample_training_rectangle,
    spiral_order,
)


def edit_set(grid):
    grid = np.asarray(grid, bool)
    return LatentEditSet(grid, grid.copy())


def cell_oracle(m, f):
    h, w = m.shape
    out = np.zeros((h // f, w // f), bool)
    for i in range(h // f):
        for j in range(w // f):
            out[i, j] = any(m[y, x] == 0 for y in range(i * f, i * f + f) for x in range(j * f, j * f + f))
    return out


def test_downsample_trivial():
    assert not downsample_mask(np.ones((8, 8)), 4).base.any()
    m = np.ones((8, 8))
    m[5, 2] = 0
    s = downsample_mask(m, 4)
    assert s.base.sum() == 1 and s.base[1, 0]
    np.testing.assert_array_equal(s.base, s.dilated)


def test_downsample_aligned_square():
    m = np.ones((32, 32))
    m[8:16, 12:20] = 0
    expected = np.zeros((8, 8), bool)
    expected[2:4, 3:5] = True
    np.testing.assert_array_equal(downsample_mask(m, 4).base, expected)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_downsample_matches_cell_oracle(seed):
    m = (np.random.default_rng(seed).random((12, 16)) > 0.1).astype(np.uint8)
    np.testing.assert_array_equal(downsample_mask(m, 4).base, cell_oracle(m, 4))


def test_downsample_full_edit_and_translation():
    assert downsample_mask(np.zeros((8, 12)), 4).base.all()
    m = np.ones((32, 32), np.uint8)
    m[3:7, 5:6] = 0
    a = downsample_mask(m, 4).base
    b = downsample_mask(np.roll(m, (8, 4), axis=(0, 1)), 4).base
    np.testing.assert_array_equal(np.roll(a, (2, 1), axis=(0, 1)), b)


def test_downsample_errors():
    with pytest.raises(ValueError):
        downsample_mask(np.ones((10, 8)), 4)
    with pytest.raises(ValueError):
        downsample_mask(np.full((8, 8), 2), 4)


def test_dilate_cases():
    g = np.zeros((5, 5), bool)
    g[2, 2] = True
    s = edit_set(g)
    np.testing.assert_array_equal(dilate(s, 0).dilated, g)
    d1 = dilate(s, 1)
    assert d1.dilated.sum() == 9 and d1.dilated[1:4, 1:4].all()
    np.testing.assert_array_equal(d1.base, g)
    c = np.zeros((5, 5), bool)
    c[0, 0] = True
    assert dilate(edit_set(c), 1).dilated.sum() == 4
    with pytest.raises(ValueError):
        dilate(s, -1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 3))
def test_dilate_extensive_and_monotone(seed, r):
    g = np.random.default_rng(seed).random((7, 9)) < 0.15
    s = edit_set(g)
    small, big = dilate(s, r).dilated, dilate(s, r + 1).dilated
    assert np.all(small >= g) and np.all(big >= small)
    # brute-force Chebyshev oracle
    pts = np.argwhere(g)
    for (i, j) in itertools.product(range(7), range(9)):
        near = bool(len(pts)) and np.max(np.abs(pts - [i, j]), axis=1).min() <= r
        assert small[i, j] == near


def layer_oracle(region):
    # Chebyshev distance to the nearest non-member cell, outside of the grid counting as non-member
    h, w = region.shape
    out = np.zeros((h, w), int)
    for i, j in np.argwhere(region):
        d = min(i + 1, j + 1, h - i, w - j)
        for y, x in itertools.product(range(h), range(w)):
            if not region[y, x]:
                d = min(d, max(abs(y - i), abs(x - j)))
        out[i, j] = d
    return out


def ring(top, left, h, w):
    # clockwise from the top-left corner
    r = [(top, left + k) for k in range(w)]
    r += [(top + k, left + w - 1) for k in range(1, h)]
    if h > 1:
        r += [(top + h - 1, left + w - 1 - k) for k in range(1, w)]
    if w > 1:
        r += [(top + h - 1 - k, left) for k in range(1, h - 1)]
    return r


def test_spiral_single_and_3x3():
    g = np.zeros((4, 4), bool)
    g[1, 2] = True
    assert spiral_order(edit_set(g)) == [(1, 2)]
    g = np.zeros((5, 5), bool)
    g[1:4, 1:4] = True
    order = spiral_order(edit_set(g))
    assert order[-1] == (2, 2)
    assert set(order[:8]) == set(ring(1, 1, 3, 3))


def test_spiral_4x6_block_matches_peeling_oracle():
    g = np.zeros((6, 8), bool)
    g[1:5, 1:7] = True
    order = spiral_order(edit_set(g))
    layers = layer_oracle(g)
    assert [int((layers == k).sum()) for k in (1, 2)] == [16, 8]
    assert order == ring(1, 1, 4, 6) + ring(2, 2, 2, 4)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_spiral_is_layered_permutation(seed):
    g = np.random.default_rng(seed).random((8, 8)) < 0.5
    if not g.any():
        g[0, 0] = True
    order = spiral_order(edit_set(g))
    assert sorted(order) == sorted(map(tuple, np.argwhere(g).tolist()))
    np.testing.assert_array_equal(peel_layers(g), layer_oracle(g))
    lay = peel_layers(g)
    ks = [lay[p] for p in order]
    assert ks == sorted(ks)


def test_orders_reject_empty():
    empty = edit_set(np.zeros((3, 3), bool))
    with pytest.raises(ValueError):
        spiral_order(empty)
    with pytest.raises(ValueError):
        random_order(empty, 0)


def test_random_order_basics():
    g = np.zeros((3, 3), bool)
    g[1, 1] = True
    assert random_order(edit_set(g), 5) == [(1, 1)]
    g = np.random.default_rng(0).random((6, 6)) < 0.5
    assert random_order(edit_set(g), 7) == random_order(edit_set(g), 7)


def test_random_order_uniform_over_permutations():
    g = np.zeros((2, 2), bool) | True
    s = edit_set(g)
    n = 10_000
    counts = {}
    for seed in range(n):
        key = tuple(random_order(s, seed))
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 24
    p = 1 / 24
    sigma = math.sqrt(n * p * (1 - p))
    assert all(abs(c - n * p) < 3 * sigma for c in counts.values())
    chi2 = sum((c - n * p) ** 2 / (n * p) for c in counts.values())
    assert chi2 < 49.7  # chi-square 23 dof, p = 0.002


def test_soft_mask_trivial():
    m = (np.random.default_rng(1).random((16, 16)) > 0.3).astype(np.uint8)
    np.testing.assert_array_equal(gaussian_soft_mask(m, 0), m)
    np.testing.assert_array_equal(gaussian_soft_mask(np.ones((9, 9)), 1.5), np.ones((9, 9)))
    np.testing.assert_array_equal(gaussian_soft_mask(np.zeros((9, 9)), 1.5), np.zeros((9, 9)))


def test_soft_mask_step_edge_matches_erf():
    m = np.zeros((20, 20), np.uint8)
    m[:, 10:] = 1
    s = gaussian_soft_mask(m, 1.0)
    # pixel centres sit half a pixel either side of the edge
    phi = 0.5 * (1 + math.erf(0.5 / math.sqrt(2)))
    assert s[10, 10] == pytest.approx(phi, abs=0.02)
    assert s[10, 9] == pytest.approx(1 - phi, abs=0.02)
    assert (s[10, 9] + s[10, 10]) / 2 == pytest.approx(0.5, abs=0.02)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 1.7, 2.0])
def test_soft_mask_exactly_one_beyond_support(sigma):
    m = np.ones((24, 24), np.uint8)
    m[9:13, 5:11] = 0
    s = gaussian_soft_mask(m, sigma)
    far = chebyshev_distance_to_edit(m) > math.ceil(3 * sigma)
    assert np.all(s[far] == 1.0)
    assert np.all(s[~far] < 1.0)
    assert s.min() >= 0 and s.max() <= 1


def test_blur_backends_agree():
    img = np.random.default_rng(2).random((13, 7))
    k = np.array([0.1, 0.2, 0.4, 0.2, 0.1])
    outs = [fn(img, k) for fn in _kernels.implementations("blur_axis0").values()]
    for o in outs[1:]:
        np.testing.assert_allclose(o, outs[0], rtol=1e-12)


def test_training_rectangle_ranges():
    rng = np.random.default_rng(0)
    heights = set()
    for _ in range(2000):
        r = sample_training_rectangle(16, 16, rng)
        heights.add(r.height)
        assert 4 <= r.height <= 8 and 4 <= r.width <= 8
    assert heights == {4, 5, 6, 7, 8}


def test_training_rectangle_inside_grid_and_uniform():
    rng = np.random.default_rng(1)
    n = 100_000
    hist = np.zeros(9, int)
    for _ in range(n):
        r = sample_training_rectangle(16, 16, rng)
        assert r.top >= 0 and r.left >= 0 and r.top + r.height <= 16 and r.left + r.width <= 16
        hist[r.height] += 1
    p = 1 / 5
    sigma = math.sqrt(n * p * (1 - p))
    assert np.all(np.abs(hist[4:] - n * p) < 3 * sigma)


def test_training_rectangle_small_grid():
    with pytest.raises(ValueError):
        sample_training_rectangle(4, 8, 0)
