"""Synthetic data: palette scenes for the image pipeline and a rule-based toy
token language whose clean grids serve as exact oracles for the samplers."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, TypeVar

import numpy as np

from .imageio import PNMError, read_image
from .rng import make_rng

T = TypeVar("T")

# 8-bit exact so scenes survive a PPM round trip unchanged
DEFAULT_PALETTE = tuple(
    tuple(v / 255.0 for v in rgb)
    for rgb in ((16, 16, 32), (240, 240, 224), (216, 48, 40), (40, 140, 64), (48, 80, 200), (240, 200, 24))
)


@dataclass(frozen=True)
class SceneSpec:
    """Palette scenes built from grid-snapped rectangles and single-cell discs.

    Rectangles cover whole ``grid`` x ``grid`` cells and discs are drawn only
    into cells that are still a single colour, so with 6 colours the corpus
    holds at most 6 + 2*30 distinct cell patterns and a 64-word patch
    codebook is near-lossless.
    """

    size: int = 32
    palette: tuple[tuple[float, float, float], ...] = DEFAULT_PALETTE
    min_shapes: int = 1
    max_shapes: int = 4
    kinds: tuple[str, ...] = ("rect", "disc")
    background: str = "flat"  # or "gradient"
    grid: int = 4
    max_tries: int = 50


def _disc_masks(g: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:g, 0:g] + 0.5
    r2 = (yy - g / 2) ** 2 + (xx - g / 2) ** 2
    return r2 <= (g / 2) ** 2, r2 <= (g / 2 - 0.5) ** 2


def _draw_shape(img, kind, color, spec, rng) -> bool:
    s, g = spec.size, spec.grid
    cells = s // g
    if kind == "rect":
        hc = int(rng.integers(1, max(1, cells // 2) + 1))
        wc = int(rng.integers(1, max(1, cells // 2) + 1))
        top = int(rng.integers(0, cells - hc + 1)) * g
        left = int(rng.integers(0, cells - wc + 1)) * g
        img[top:top + hc * g, left:left + wc * g] = color
        return True
    if kind == "disc":
        cy, cx = (int(v) * g for v in rng.integers(0, cells, size=2))
        cell = img[cy:cy + g, cx:cx + g]
        if not np.all(cell == cell[0, 0]):
            return False
        large, small = _disc_masks(g)
        cell[large if rng.integers(2) else small] = color
        return True
    raise ValueError(f"unknown shape kind {kind!r}")


def generate_scenes(spec: SceneSpec, n: int, seed: int) -> list[np.ndarray]:
    """``n`` float32 ``(size, size, 3)`` scenes, bit-identical for a given seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if spec.size % spec.grid:
        raise ValueError(f"scene size {spec.size} is not a multiple of grid {spec.grid}")
    palette = np.asarray(spec.palette, dtype=np.float32)
    if not 1 <= len(palette) <= 6:
        raise ValueError("palette must hold between 1 and 6 colours")
    out = []
    for i in range(n):
        rng = make_rng(seed, 1, i)
        bg = int(rng.integers(len(palette)))
        img = np.empty((spec.size, spec.size, 3), dtype=np.float32)
        if spec.background == "flat":
            img[:] = palette[bg]
        elif spec.background == "gradient":
            other = palette[int(rng.integers(len(palette)))]
            # one step per cell row keeps every cell single-coloured (discs need that),
            # snapped to 8-bit levels so the scene survives a PPM round trip
            t = np.repeat(np.linspace(0.0, 1.0, spec.size // spec.grid, dtype=np.float32), spec.grid)
            img[:] = np.round(((1 - t[:, None, None]) * palette[bg] + t[:, None, None] * other) * 255) / 255
        else:
            raise ValueError(f"unknown background mode {spec.background!r}")
        count = int(rng.integers(spec.min_shapes, spec.max_shapes + 1))
        for _ in range(count):
            kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
            color = palette[int(rng.integers(len(palette)))]
            for _ in range(spec.max_tries):
                if _draw_shape(img, kind, color, spec, rng):
                    break
            else:
                raise RuntimeError(f"could not place a {kind} in scene {i} after {spec.max_tries} tries")
        out.append(img)
    return out


# ---------------------------------------------------------------------------
# toy token language


@dataclass(frozen=True)
class ToyLanguageSpec:
    """Token grids where each interior token is a function of its north and west neighbours.

    Rules:
      ``digits``  with base b = sqrt(N): token = b*hi(north) + lo(west), where
                  hi(t) = t // b and lo(t) = t % b. Every column shares one hi
                  digit and every row one lo digit, so any token is recoverable
                  from any other visible token in its row and column.
      ``sum_mod`` token = (north + west) mod N with a random first row/column.
    """

    grid: tuple[int, int] = (8, 8)
    n_codes: int = 64
    rule: str = "digits"
    noise: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.noise < 1.0:
            raise ValueError("noise rate must be in [0, 1)")
        if self.rule == "digits" and math.isqrt(self.n_codes) ** 2 != self.n_codes:
            raise ValueError("digits rule needs a square vocabulary size")
        if self.rule not in ("digits", "sum_mod"):
            raise ValueError(f"unknown rule {self.rule!r}")

    @property
    def base(self) -> int:
        return math.isqrt(self.n_codes)


def apply_rule(spec: ToyLanguageSpec, north: np.ndarray, west: np.ndarray) -> np.ndarray:
    if spec.rule == "digits":
        b = spec.base
        return (north // b) * b + west % b
    return (north + west) % spec.n_codes


def rule_violations(grid: np.ndarray, spec: ToyLanguageSpec) -> np.ndarray:
    """Boolean grid, true at interior positions whose token breaks the rule."""
    grid = np.asarray(grid)
    out = np.zeros(grid.shape, dtype=bool)
    out[1:, 1:] = grid[1:, 1:] != apply_rule(spec, grid[:-1, 1:], grid[1:, :-1])
    return out


def rule_forced_mask(spec: ToyLanguageSpec) -> np.ndarray:
    """Positions whose clean value is fixed by the rule (all interior positions)."""
    m = np.zeros(spec.grid, dtype=bool)
    m[1:, 1:] = True
    return m


def generate_toy_language(spec: ToyLanguageSpec, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """``(grids, clean)`` int64 arrays of shape ``(n, h, w)``; equal when noise is 0."""
    if n < 1:
        raise ValueError("n must be >= 1")
    h, w = spec.grid
    rng = make_rng(seed, 2)
    clean = np.empty((n, h, w), dtype=np.int64)
    if spec.rule == "digits":
        b = spec.base
        hi = rng.integers(0, b, size=(n, 1, w))
        lo = rng.integers(0, b, size=(n, h, 1))
        clean[:] = hi * b + lo
    else:
        clean[:, 0, :] = rng.integers(0, spec.n_codes, size=(n, w))
        clean[:, :, 0] = rng.integers(0, spec.n_codes, size=(n, h))
        for i in range(1, h):
            for j in range(1, w):
                clean[:, i, j] = apply_rule(spec, clean[:, i - 1, j], clean[:, i, j - 1])
    grids = clean.copy()
    if spec.noise > 0:
        hit = rng.random(size=grids.shape) < spec.noise
        shift = rng.integers(1, spec.n_codes, size=grids.shape)
        grids[hit] = (grids[hit] + shift[hit]) % spec.n_codes
    return grids, clean


# ---------------------------------------------------------------------------
# files and splits


def load_image_dir(path: str | os.PathLike, expected_size: tuple[int, int] | None = None
                   ) -> tuple[list[np.ndarray], list[str]]:
    """All ``*.pgm`` / ``*.ppm`` files in ``path`` sorted by name, as float images."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"{root} is not a directory")
    names = sorted(p.name for p in root.iterdir() if p.suffix.lower() in (".pgm", ".ppm"))
    images = []
    for name in names:
        img = read_image(root / name)
        if expected_size is not None and img.shape[:2] != tuple(expected_size):
            raise PNMError(f"{root / name}: size {img.shape[0]}x{img.shape[1]}, expected "
                           f"{expected_size[0]}x{expected_size[1]}")
        images.append(img)
    return images, names


def split(items: Sequence[T], ratio: float, seed: int) -> tuple[list[T], list[T]]:
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    n = len(items)
    if n < 2:
        raise ValueError("need at least two items to split")
    perm = make_rng(seed, 3).permutation(n)
    k = int(round(ratio * n))
    return [items[i] for i in perm[:k]], [items[i] for i in perm[k:]]
