"""Evaluation metrics: masked L1, Frechet distance and k-NN density / coverage."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .masks import validate_pixel_mask
from .rng import make_rng
from .tokenizer import PatchTokenizer

RANDPROJ_DIM = 64


@dataclass(frozen=True)
class FeatureSet:
    vectors: np.ndarray  # (n, q) float64
    tag: str = "real"    # "real" or "generated"
    mode: str = ""

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError(f"features must be (n, q), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("features hold non-finite values")
        object.__setattr__(self, "vectors", v)

    def __len__(self) -> int:
        return self.vectors.shape[0]


def _image(arr) -> np.ndarray:
    # float64 (h, w, c) without clamping, so offsets are measured as given
    img = np.asarray(arr, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ValueError(f"image must be (h, w) or (h, w, c), got shape {img.shape}")
    return img


def _vectors(x) -> np.ndarray:
    return x.vectors if isinstance(x, FeatureSet) else FeatureSet(x).vectors


def masked_l1(generated: np.ndarray, source: np.ndarray, m: np.ndarray) -> float:
    """Mean |generated - source| over preserved pixels (m == 1) and channels."""
    g, s = _image(generated), _image(source)
    if g.shape != s.shape:
        raise ValueError(f"image shapes differ: {g.shape} vs {s.shape}")
    keep = validate_pixel_mask(m).astype(bool)
    if keep.shape != g.shape[:2]:
        raise ValueError(f"mask shape {keep.shape} does not match image {g.shape[:2]}")
    if not keep.any():
        raise ValueError("masked L1 needs a non-empty preserved region")
    return float(np.abs(g - s)[keep].mean())


def extract_features(images: Sequence[np.ndarray], mode: str = "randproj",
                     tokenizer: PatchTokenizer | None = None, seed: int = 0) -> FeatureSet:
    """Fixed embeddings standing in for a pretrained classifier.

    ``latent``: mean of the codebook vectors of the image's tokens.
    ``randproj``: raw pixels times a seeded Gaussian matrix, 64 dimensions.
    """
    imgs = [_image(im) for im in images]
    if not imgs:
        raise ValueError("no images to embed")
    if any(im.shape != imgs[0].shape for im in imgs):
        raise ValueError("images must share one shape")
    if mode == "latent":
        if tokenizer is None:
            raise ValueError("latent features need a tokenizer")
        cb = tokenizer.codebook.vectors.astype(np.float64)
        feats = np.stack([cb[tokenizer.encode(im).reshape(-1)].mean(axis=0) for im in imgs])
    elif mode == "randproj":
        flat = np.stack([im.reshape(-1) for im in imgs])
        proj = make_rng(seed, 30).standard_normal((flat.shape[1], RANDPROJ_DIM)) / np.sqrt(flat.shape[1])
        feats = flat @ proj
    else:
        raise ValueError(f"unknown feature mode {mode!r} (latent or randproj)")
    return FeatureSet(feats, mode=mode)


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(a, b, eps: float = 1e-6) -> float:
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`` of Gaussian fits."""
    x, y = _vectors(a), _vectors(b)
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"feature dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    if len(x) < 2 or len(y) < 2:
        raise ValueError("need at least two samples per set")
    q = x.shape[1]
    sa = np.atleast_2d(np.cov(x, rowvar=False)) + eps * np.eye(q)
    sb = np.atleast_2d(np.cov(y, rowvar=False)) + eps * np.eye(q)
    root = _psd_sqrt(sa)
    # Tr((Sa Sb)^1/2) = Tr((Sa^1/2 Sb Sa^1/2)^1/2), the latter symmetric PSD
    inner = root @ sb @ root
    w = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_cross = np.sqrt(np.clip(w, 0.0, None)).sum()
    diff = x.mean(axis=0) - y.mean(axis=0)
    d = float(diff @ diff + np.trace(sa) + np.trace(sb) - 2.0 * tr_cross)
    return max(d, 0.0)


def _knn_radii(real: np.ndarray, k: int) -> np.ndarray:
    if not 1 <= k < len(real):
        raise ValueError(f"k must be in [1, {len(real) - 1}], got {k}")
    d = _kernels.pairwise_distances(real, real)
    np.fill_diagonal(d, np.inf)  # exclude the point itself
    return np.partition(d, k - 1, axis=1)[:, k - 1]


def density(real, fake, k: int = 5) -> float:
    """Mean over fake points of how many real k-NN balls hold them, divided by k."""
    r, f = _vectors(real), _vectors(fake)
    radii = _knn_radii(r, k)
    inside = _kernels.pairwise_distances(r, f) < radii[:, None]
    return float(inside.sum() / (k * len(f)))


def coverage(real, fake, k: int = 5) -> float:
    """Fraction of real k-NN balls that contain at least one fake point."""
    r, f = _vectors(real), _vectors(fake)
    radii = _knn_radii(r, k)
    nearest_fake = _kernels.pairwise_distances(r, f).min(axis=1)
    return float(np.mean(nearest_fake < radii))


@dataclass
class MetricReport:
    masked_l1: float | None
    frechet: float
    density: float
    coverage: float
    n_real: int
    n_fake: int
    feature_mode: str
    k: int
    config: dict[str, str] = field(default_factory=dict)

    def to_text(self) -> str:
        rows = [
            ("feature_mode", self.feature_mode),
            ("k", self.k),
            ("n_real", self.n_real),
            ("n_fake", self.n_fake),
            ("masked_l1", "n/a" if self.masked_l1 is None else f"{self.masked_l1:.6f}"),
            ("frechet", f"{self.frechet:.6f}"),
            ("density", f"{self.density:.6f}"),
            ("coverage", f"{self.coverage:.6f}"),
        ]
        rows += [(f"config.{key}", self.config[key]) for key in sorted(self.config)]
        return "".join(f"{key} = {value}\n" for key, value in rows)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")
