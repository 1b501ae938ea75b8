"""Patch tokenizer: non-overlapping f x f patches quantized against a k-means codebook.

The encoder is ``patchify``, the decoder is ``unpatchify`` of codewords, and
quantization is exact nearest-neighbour search. Every token therefore owns
exactly one f x f pixel cell, which makes edits in token space strictly local
in pixel space and vice versa.
"""
from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .rng import make_rng

CODEBOOK_MAGIC = b"EDBK"
CODEBOOK_VERSION = 1


def as_image(arr) -> np.ndarray:
    """Float32 ``(h, w, c)`` copy clamped to [0, 1]; 2-D input gains a channel axis."""
    img = np.asarray(arr, dtype=np.float32)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ValueError(f"image must be (h, w) or (h, w, c), got shape {img.shape}")
    return np.clip(img, 0.0, 1.0)


def _check_divisible(h: int, w: int, f: int) -> None:
    if f <= 0 or h % f or w % f:
        raise ValueError(f"image size {h}x{w} is not divisible by patch size {f}")


def patchify(image: np.ndarray, f: int) -> np.ndarray:
    """``(l, f*f*c)`` matrix; row i is the patch at grid position i in row-major order."""
    if image.ndim == 2:
        image = image[:, :, None]
    h, w, c = image.shape
    _check_divisible(h, w, f)
    hl, wl = h // f, w // f
    return image.reshape(hl, f, wl, f, c).transpose(0, 2, 1, 3, 4).reshape(hl * wl, f * f * c)


def unpatchify(patches: np.ndarray, grid_shape: tuple[int, int], f: int, channels: int) -> np.ndarray:
    hl, wl = grid_shape
    if patches.shape != (hl * wl, f * f * channels):
        raise ValueError(f"patch matrix {patches.shape} does not fit grid {grid_shape} with f={f}, c={channels}")
    return patches.reshape(hl, wl, f, f, channels).transpose(0, 2, 1, 3, 4).reshape(hl * f, wl * f, channels)


@dataclass(frozen=True)
class Codebook:
    vectors: np.ndarray  # (N, d) float32

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if v.ndim != 2 or v.shape[0] == 0:
            raise ValueError(f"codebook must be a non-empty (N, d) array, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("codebook contains non-finite values")
        if np.unique(v, axis=0).shape[0] != v.shape[0]:
            raise ValueError("codebook contains duplicate codewords")
        object.__setattr__(self, "vectors", v)

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def id(self) -> str:
        return hashlib.sha1(self.vectors.tobytes()).hexdigest()[:12]

    def to_bytes(self) -> bytes:
        n, d = self.vectors.shape
        head = CODEBOOK_MAGIC + struct.pack("<III", CODEBOOK_VERSION, n, d)
        return head + self.vectors.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Codebook":
        if len(data) < 16 or data[:4] != CODEBOOK_MAGIC:
            raise ValueError("not a codebook file (bad magic)")
        version, n, d = struct.unpack("<III", data[4:16])
        if version != CODEBOOK_VERSION:
            raise ValueError(f"unsupported codebook version {version}")
        if len(data) != 16 + 4 * n * d:
            raise ValueError(f"codebook payload is {len(data) - 16} bytes, expected {4 * n * d}")
        return cls(np.frombuffer(data, dtype="<f4", offset=16).reshape(n, d).astype(np.float32))

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Codebook":
        try:
            return cls.from_bytes(Path(path).read_bytes())
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from None


def quantize(vectors: np.ndarray, codebook: Codebook, grid_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Index of the nearest codeword for each row; ties go to the smallest index."""
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[1] != codebook.dim:
        raise ValueError(f"vector dimension {vectors.shape[-1]} != codebook dimension {codebook.dim}")
    idx, _ = _kernels.nearest_codeword(vectors, codebook.vectors)
    return idx.reshape(grid_shape) if grid_shape is not None else idx


def decode(grid: np.ndarray, codebook: Codebook, f: int, channels: int) -> np.ndarray:
    grid = np.asarray(grid)
    if grid.size and (grid.min() < 0 or grid.max() >= codebook.size):
        raise IndexError(f"token index out of range [0, {codebook.size})")
    img = unpatchify(codebook.vectors[grid.reshape(-1)], grid.shape, f, channels)
    return np.clip(img, 0.0, 1.0)


@dataclass(frozen=True)
class PatchTokenizer:
    codebook: Codebook
    f: int = 4
    channels: int = 3

    def __post_init__(self):
        if self.codebook.dim != self.f * self.f * self.channels:
            raise ValueError(f"codebook dim {self.codebook.dim} != f*f*c = {self.f * self.f * self.channels}")

    @classmethod
    def from_codebook(cls, codebook: Codebook, channels: int) -> "PatchTokenizer":
        f = int(round((codebook.dim / channels) ** 0.5))
        return cls(codebook, f, channels)

    def grid_shape(self, image_shape: tuple[int, ...]) -> tuple[int, int]:
        h, w = image_shape[:2]
        _check_divisible(h, w, self.f)
        return h // self.f, w // self.f

    def encode(self, image: np.ndarray) -> np.ndarray:
        image = as_image(image)
        if image.shape[2] != self.channels:
            raise ValueError(f"image has {image.shape[2]} channels, tokenizer expects {self.channels}")
        return quantize(patchify(image, self.f), self.codebook, self.grid_shape(image.shape))

    def decode(self, grid: np.ndarray) -> np.ndarray:
        return decode(grid, self.codebook, self.f, self.channels)


# ---------------------------------------------------------------------------
# codebook learning


def kmeans(points: np.ndarray, k: int, iters: int, seed: int) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd's k-means with k-means++ seeding.

    Returns ``(centers, labels, history)`` where ``history`` holds the mean
    squared quantization error after every assignment step; it is
    non-increasing. Empty clusters are re-seeded at the currently worst-served
    point.
    """
    x = np.ascontiguousarray(points, dtype=np.float32)
    n = x.shape[0]
    rng = make_rng(seed, 0)
    centers = np.empty((k, x.shape[1]), dtype=np.float32)
    x64 = x.astype(np.float64)
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = ((x64 - x64[first]) ** 2).sum(1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise ValueError(f"only {j} distinct points, cannot seed {k} centers")
        nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
        nxt = min(nxt, n - 1)
        centers[j] = x[nxt]
        d2 = np.minimum(d2, ((x64 - x64[nxt]) ** 2).sum(1))

    history: list[float] = []
    labels, dist = _kernels.nearest_codeword(x, centers)
    history.append(float(dist.mean()))
    for _ in range(iters):
        sums, counts = _kernels.cluster_sums(x, labels, k)
        new = centers.copy()
        nz = counts > 0
        new[nz] = (sums[nz] / counts[nz, None]).astype(np.float32)
        empty = np.flatnonzero(~nz)
        if empty.size:
            order = np.argsort(-dist, kind="stable")
            for j, p in zip(empty, order):
                new[j] = x[p]
        # identical centers cannot both own points; give the later one a far point
        _, first_idx = np.unique(new, axis=0, return_index=True)
        dup = np.setdiff1d(np.arange(k), first_idx)
        if dup.size:
            order = np.argsort(-dist, kind="stable")
            taken = {tuple(r) for r in new}
            cand = (x[p] for p in order if tuple(x[p]) not in taken)
            for j in dup:
                new[j] = next(cand)
        new_labels, new_dist = _kernels.nearest_codeword(x, new)
        mse = float(new_dist.mean())
        if mse > history[-1]:
            # float32 mean rounding can nudge a converged solution upward; keep the old one
            break
        converged = np.array_equal(new_labels, labels)
        centers, labels, dist = new, new_labels, new_dist
        history.append(mse)
        if converged:
            break
    return centers, labels, history


def learn_codebook(images: Sequence[np.ndarray], n_codes: int, f: int, iters: int = 30,
                   seed: int = 0) -> Codebook:
    if len(images) == 0:
        raise ValueError("cannot learn a codebook from an empty dataset")
    patches = np.concatenate([patchify(as_image(im), f) for im in images], axis=0)
    distinct = np.unique(patches, axis=0).shape[0]
    if n_codes > distinct:
        raise ValueError(f"codebook size {n_codes} exceeds the {distinct} distinct patches in the data")
    centers, _, _ = kmeans(patches, n_codes, iters, seed)
    return Codebook(centers)


def lattice_codebook(n_codes: int, f: int, channels: int) -> Codebook:
    """Codebook whose codewords are distinct points of a regular value lattice.

    Values are multiples of ``1/(b-1)`` with the smallest base b that gives
    ``n_codes`` distinct patches. Decoding and re-encoding is exact, which
    lets token-level experiments run through the image-space code paths.
    """
    d = f * f * channels
    b = 2
    while b ** d < n_codes:
        b += 1
    codes = np.arange(n_codes)
    digits = np.stack([(codes // b ** t) % b for t in range(d)], axis=1)
    return Codebook((digits / (b - 1)).astype(np.float32))


# ---------------------------------------------------------------------------
# sequence datasets


@dataclass
class SequenceDataset:
    grids: np.ndarray  # (n, h_l, w_l) int64
    source_ids: list[str] = field(default_factory=list)
    split: str = "train"
    codebook_id: str = ""

    def __len__(self) -> int:
        return self.grids.shape[0]

    def sequences(self) -> np.ndarray:
        return self.grids.reshape(len(self), -1)


def build_sequence_dataset(images: Sequence[np.ndarray], tokenizer: PatchTokenizer,
                           source_ids: Sequence[str] | None = None, split: str = "train") -> SequenceDataset:
    ids = list(source_ids) if source_ids is not None else [str(i) for i in range(len(images))]
    if len(ids) != len(images):
        raise ValueError("source_ids and images differ in length")
    if len(images) == 0:
        return SequenceDataset(np.zeros((0, 0, 0), dtype=np.int64), [], split, tokenizer.codebook.id)
    grids = np.stack([tokenizer.encode(im) for im in images]).astype(np.int64)
    return SequenceDataset(grids, ids, split, tokenizer.codebook.id)


# ---------------------------------------------------------------------------
# locality helpers


def latent_collage(grid_keep: np.ndarray, grid_fill: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Token-space collage: ``grid_keep`` where ``keep`` is true, ``grid_fill`` elsewhere."""
    return np.where(np.asarray(keep, dtype=bool), grid_keep, grid_fill)


def changed_cells(img_a: np.ndarray, img_b: np.ndarray, f: int) -> np.ndarray:
    """Boolean latent-grid map of f x f cells in which the two images differ at all."""
    diff = np.any(np.asarray(img_a) != np.asarray(img_b), axis=-1) if np.ndim(img_a) == 3 else img_a != img_b
    h, w = diff.shape
    _check_divisible(h, w, f)
    return diff.reshape(h // f, f, w // f, f).any(axis=(1, 3))
