"""Mask geometry on the pixel and latent grids.

Convention: a pixel mask holds 1 for preserved source pixels and 0 for the
region to edit. Latent sets are boolean grids where True marks an edit
position.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .rng import make_rng

# clockwise heading order in (drow, dcol), starting east
_HEADINGS = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)]
# preference relative to the current heading: hard left first, then sweep right
_TURNS = (-2, -1, 0, 1, 2, 3, 4, -3)


@dataclass(frozen=True)
class LatentEditSet:
    base: np.ndarray     # positions to randomize / edit
    dilated: np.ndarray  # positions to resample, superset of base

    def __post_init__(self):
        if self.base.shape != self.dilated.shape:
            raise ValueError("base and dilated sets have different grid shapes")
        if np.any(self.base & ~self.dilated):
            raise ValueError("base set is not contained in the dilated set")

    @property
    def shape(self) -> tuple[int, int]:
        return self.base.shape


@dataclass(frozen=True)
class TrainingRectangle:
    top: int
    left: int
    height: int
    width: int

    def positions(self, grid_shape: tuple[int, int]) -> np.ndarray:
        m = np.zeros(grid_shape, dtype=bool)
        m[self.top:self.top + self.height, self.left:self.left + self.width] = True
        return m


def validate_pixel_mask(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"pixel mask must be 2-D, got shape {m.shape}")
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("pixel mask values must be 0 or 1")
    return m.astype(np.uint8)


def downsample_mask(m: np.ndarray, f: int) -> LatentEditSet:
    """Latent position is in the base set iff its f x f cell holds any edit pixel."""
    m = validate_pixel_mask(m)
    h, w = m.shape
    if f <= 0 or h % f or w % f:
        raise ValueError(f"mask size {h}x{w} is not divisible by patch size {f}")
    base = (m == 0).reshape(h // f, f, w // f, f).any(axis=(1, 3))
    return LatentEditSet(base, base.copy())


def _chebyshev_grow(x: np.ndarray, radius: int) -> np.ndarray:
    out = x.copy()
    h, w = x.shape
    for _ in range(radius):
        cur = out.copy()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                src = cur[max(0, -dr):h - max(0, dr), max(0, -dc):w - max(0, dc)]
                out[max(0, dr):h - max(0, -dr), max(0, dc):w - max(0, -dc)] |= src
    return out


def _erode(x: np.ndarray) -> np.ndarray:
    # 3x3 erosion with everything outside the grid counted as background
    p = np.pad(x, 1, constant_values=False)
    h, w = x.shape
    out = np.ones_like(x)
    for dr in (0, 1, 2):
        for dc in (0, 1, 2):
            out &= p[dr:dr + h, dc:dc + w]
    return out


def dilate(edit: LatentEditSet, radius: int) -> LatentEditSet:
    """Dilated set = base grown by Chebyshev distance ``radius``, clipped to the grid."""
    if radius < 0:
        raise ValueError("dilation radius must be >= 0")
    return LatentEditSet(edit.base.copy(), _chebyshev_grow(edit.base, radius))


def peel_layers(region: np.ndarray) -> np.ndarray:
    """Integer grid: k >= 1 is the Chebyshev distance to the complement, 0 outside."""
    layers = np.zeros(region.shape, dtype=np.int64)
    cur = region.astype(bool)
    k = 0
    while cur.any():
        k += 1
        nxt = _erode(cur)
        layers[cur & ~nxt] = k
        cur = nxt
    return layers


def _walk_layer(cells: set[tuple[int, int]]) -> list[tuple[int, int]]:
    order: list[tuple[int, int]] = []
    left = set(cells)
    while left:
        pos = min(left)  # topmost, then leftmost
        heading = 0
        while True:
            order.append(pos)
            left.discard(pos)
            for turn in _TURNS:
                hd = (heading + turn) % 8
                nxt = (pos[0] + _HEADINGS[hd][0], pos[1] + _HEADINGS[hd][1])
                if nxt in left:
                    pos, heading = nxt, hd
                    break
            else:
                break
    return order


def spiral_order(edit: LatentEditSet) -> list[tuple[int, int]]:
    """Dilated positions from the region border inward, clockwise within each layer.

    Layers come from iterated 3x3 erosion. Each layer is walked keeping the
    outside on the left, starting at its topmost-leftmost cell heading east;
    when a walk dead-ends it restarts at the topmost-leftmost unvisited cell.
    """
    if not edit.dilated.any():
        raise ValueError("cannot order an empty edit set")
    layers = peel_layers(edit.dilated)
    order: list[tuple[int, int]] = []
    for k in range(1, layers.max() + 1):
        cells = {(int(r), int(c)) for r, c in np.argwhere(layers == k)}
        order.extend(_walk_layer(cells))
    return order


def random_order(edit: LatentEditSet, seed: int) -> list[tuple[int, int]]:
    cells = [(int(r), int(c)) for r, c in np.argwhere(edit.dilated)]
    if not cells:
        raise ValueError("cannot order an empty edit set")
    perm = make_rng(seed, 4).permutation(len(cells))
    return [cells[i] for i in perm]


def gaussian_kernel(sigma: float) -> np.ndarray:
    r = math.ceil(3 * sigma)
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_soft_mask(m: np.ndarray, sigma: float) -> np.ndarray:
    """Truncated gaussian blur of a binary mask, as float32 in [0, 1].

    Both the preserved and the edit indicator are blurred; wherever one of
    them blurs to exactly zero the result is pinned to exactly 0 or 1. So a
    pixel whose whole kernel support (Chebyshev radius ceil(3*sigma)) is
    preserved comes out exactly 1.0. Borders replicate the edge pixel.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    m = validate_pixel_mask(m)
    if sigma == 0:
        return m.astype(np.float32)
    k = gaussian_kernel(sigma)

    def blur(a):
        b = _kernels.blur_axis0(np.ascontiguousarray(a), k)
        return _kernels.blur_axis0(np.ascontiguousarray(b.T), k).T

    keep = blur(m.astype(np.float64))
    edit = blur(1.0 - m.astype(np.float64))
    soft = np.where(edit == 0.0, 1.0, np.where(keep == 0.0, 0.0, keep))
    return np.clip(soft, 0.0, 1.0).astype(np.float32)


def side_range(n: int) -> tuple[int, int]:
    return math.ceil(0.2 * n), math.floor(0.5 * n)


def sample_training_rectangle(h_l: int, w_l: int, rng: np.random.Generator | int) -> TrainingRectangle:
    """Rectangle with sides uniform over [ceil(0.2 n), floor(0.5 n)], placed uniformly."""
    if h_l < 5 or w_l < 5:
        raise ValueError(f"grid {h_l}x{w_l} too small for training rectangles (need >= 5x5)")
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng, 5)
    hlo, hhi = side_range(h_l)
    wlo, whi = side_range(w_l)
    hh = int(rng.integers(hlo, hhi + 1))
    ww = int(rng.integers(wlo, whi + 1))
    top = int(rng.integers(0, h_l - hh + 1))
    left = int(rng.integers(0, w_l - ww + 1))
    return TrainingRectangle(top, left, hh, ww)


def latent_to_pixel(grid_mask: np.ndarray, f: int) -> np.ndarray:
    return np.repeat(np.repeat(grid_mask, f, axis=0), f, axis=1)


def chebyshev_distance_to_edit(m: np.ndarray) -> np.ndarray:
    """Per-pixel Chebyshev distance to the nearest edit (0) pixel; inf if none."""
    m = validate_pixel_mask(m)
    edit = np.argwhere(m == 0)
    if edit.size == 0:
        return np.full(m.shape, np.inf)
    yy, xx = np.indices(m.shape)
    d = np.full(m.shape, np.inf)
    for y, x in edit:
        d = np.minimum(d, np.maximum(np.abs(yy - y), np.abs(xx - x)))
    return d
