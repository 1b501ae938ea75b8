"""Hot numeric inner loops, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports and ``EDIBERT_DISABLE_NUMBA`` is
unset (or "0"). Both paths compute distances from explicit coordinate
differences, never via the ``|a|^2 - 2ab + |b|^2`` expansion, so ties and
near-ties resolve the same way a brute-force scan would.
"""
from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("EDIBERT_DISABLE_NUMBA", "0").lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("disabled by EDIBERT_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"

# rows per broadcast block in the numpy fallbacks; bounds peak memory
_CHUNK = 1024


# --------------------------------------------------------------------------
# numpy implementations


def _np_nearest_codeword(x, codebook):
    n = x.shape[0]
    idx = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)
    cb = codebook.astype(np.float64)
    for start in range(0, n, _CHUNK):
        blk = x[start:start + _CHUNK].astype(np.float64)
        diff = blk[:, None, :] - cb[None, :, :]
        d2 = np.einsum("ikd,ikd->ik", diff, diff)
        # argmin returns the first minimum -> smallest index on ties
        j = np.argmin(d2, axis=1)
        idx[start:start + _CHUNK] = j
        best[start:start + _CHUNK] = d2[np.arange(len(j)), j]
    return idx, best


def _np_cluster_sums(x, labels, k):
    sums = np.zeros((k, x.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, x.astype(np.float64))
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    return sums, counts


def _np_pairwise_distances(a, b):
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
    for start in range(0, a.shape[0], _CHUNK):
        diff = a[start:start + _CHUNK, None, :] - b[None, :, :]
        out[start:start + _CHUNK] = np.sqrt(np.einsum("ijd,ijd->ij", diff, diff))
    return out


def _np_blur_axis0(img, kernel):
    # edge-replicating correlation along axis 0 of a 2-D array
    r = (kernel.shape[0] - 1) // 2
    h = img.shape[0]
    padded = np.concatenate([np.repeat(img[:1], r, axis=0), img, np.repeat(img[-1:], r, axis=0)], axis=0)
    out = np.zeros_like(img, dtype=np.float64)
    for t in range(kernel.shape[0]):
        out += kernel[t] * padded[t:t + h]
    return out


# --------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @njit(cache=True)
    def _nb_nearest_codeword(x, codebook):
        n, d = x.shape
        k = codebook.shape[0]
        idx = np.empty(n, dtype=np.int64)
        best = np.empty(n, dtype=np.float64)
        for i in range(n):
            bi = 0
            bd = np.inf
            for j in range(k):
                acc = 0.0
                for t in range(d):
                    diff = np.float64(x[i, t]) - np.float64(codebook[j, t])
                    acc += diff * diff
                    if acc >= bd:
                        break
                if acc < bd:
                    bd = acc
                    bi = j
            idx[i] = bi
            best[i] = bd
        return idx, best

    @njit(cache=True)
    def _nb_cluster_sums(x, labels, k):
        n, d = x.shape
        sums = np.zeros((k, d), dtype=np.float64)
        counts = np.zeros(k, dtype=np.int64)
        for i in range(n):
            c = labels[i]
            counts[c] += 1
            for t in range(d):
                sums[c, t] += x[i, t]
        return sums, counts

    @njit(cache=True)
    def _nb_pairwise_distances(a, b):
        n, d = a.shape
        m = b.shape[0]
        out = np.empty((n, m), dtype=np.float64)
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for t in range(d):
                    diff = np.float64(a[i, t]) - np.float64(b[j, t])
                    acc += diff * diff
                out[i, j] = np.sqrt(acc)
        return out

    @njit(cache=True)
    def _nb_blur_axis0(img, kernel):
        h, w = img.shape
        r = (kernel.shape[0] - 1) // 2
        out = np.zeros((h, w), dtype=np.float64)
        for y in range(h):
            for t in range(kernel.shape[0]):
                src = min(max(y + t - r, 0), h - 1)
                kt = kernel[t]
                for x in range(w):
                    out[y, x] += kt * img[src, x]
        return out

    nearest_codeword = _nb_nearest_codeword
    cluster_sums = _nb_cluster_sums
    pairwise_distances = _nb_pairwise_distances
    blur_axis0 = _nb_blur_axis0
else:
    nearest_codeword = _np_nearest_codeword
    cluster_sums = _np_cluster_sums
    pairwise_distances = _np_pairwise_distances
    blur_axis0 = _np_blur_axis0


def implementations(name: str) -> dict:
    """Both implementations of kernel ``name`` keyed by backend (numba only if available)."""
    out = {"numpy": globals()[f"_np_{name}"]}
    if HAVE_NUMBA:
        out["numba"] = globals()[f"_nb_{name}"]
    return out
