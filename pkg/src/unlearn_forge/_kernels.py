"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import from ``UNLEARN_FORGE_BACKEND``:
``numba`` or ``numpy`` force one path for every kernel; ``auto`` (default)
takes, per kernel, whichever path ``benchmarks/bench_kernels.py`` measured as
faster at desk-scale sizes.  Dense matmuls (layers, pairwise distances) stay
on BLAS and the KDE grid is a vectorised numpy expression; softmax and the
silhouette loop go through numba.  Both implementations are always
importable as ``<name>_numpy`` / ``<name>_numba`` so tests and the benchmark
can compare them directly.

The numba kernels accumulate every reduction sequentially in row-major
order, which makes their results reproducible bit-for-bit.  The numpy
fallback delegates to BLAS; it is deterministic on a given machine but its
summation order differs, so the two backends agree only to rounding.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_requested = os.environ.get("UNLEARN_FORGE_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ImportError(f"UNLEARN_FORGE_BACKEND must be auto, numba or numpy, got {_requested!r}")
BACKEND = _requested if (_requested != "numba" or HAVE_NUMBA) else "numpy"


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, fastmath=False)(fn)


# --- dense layer -----------------------------------------------------------


def affine_numpy(a, w, b):
    return a @ w + b


def affine_backward_numpy(a, w, gz):
    return a.T @ gz, gz.sum(axis=0, keepdims=True), gz @ w.T


@_njit
def affine_numba(a, w, b):
    n, k_in = a.shape
    k_out = w.shape[1]
    z = np.empty((n, k_out))
    for i in range(n):
        for j in range(k_out):
            z[i, j] = b[0, j]
        for k in range(k_in):
            aik = a[i, k]
            for j in range(k_out):
                z[i, j] += aik * w[k, j]
    return z


@_njit
def affine_backward_numba(a, w, gz):
    n, k_in = a.shape
    k_out = w.shape[1]
    gw = np.zeros((k_in, k_out))
    gb = np.zeros((1, k_out))
    ga = np.empty((n, k_in))
    for i in range(n):
        for j in range(k_out):
            gb[0, j] += gz[i, j]
        for k in range(k_in):
            aik = a[i, k]
            if aik != 0.0:
                for j in range(k_out):
                    gw[k, j] += aik * gz[i, j]
            s = 0.0
            for j in range(k_out):
                s += gz[i, j] * w[k, j]
            ga[i, k] = s
    return gw, gb, ga


# --- softmax cross-entropy -------------------------------------------------


def softmax_numpy(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@_njit
def softmax_numba(z):
    n, c = z.shape
    out = np.empty((n, c))
    for i in range(n):
        m = z[i, 0]
        for j in range(1, c):
            if z[i, j] > m:
                m = z[i, j]
        s = 0.0
        for j in range(c):
            out[i, j] = math.exp(z[i, j] - m)
            s += out[i, j]
        for j in range(c):
            out[i, j] /= s
    return out


# --- pairwise geometry -----------------------------------------------------


def pairwise_dists_numpy(x):
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


@_njit
def pairwise_dists_numba(x):
    n, d = x.shape
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for k in range(d):
                diff = x[i, k] - x[j, k]
                s += diff * diff
            r = math.sqrt(s)
            out[i, j] = r
            out[j, i] = r
    return out


def silhouette_values_numpy(dist, labels, n_labels):
    n = dist.shape[0]
    onehot = np.zeros((n, n_labels))
    onehot[np.arange(n), labels] = 1.0
    sums = dist @ onehot
    counts = onehot.sum(axis=0)
    own = counts[labels]
    a = np.where(own > 1, sums[np.arange(n), labels] / np.maximum(own - 1, 1), 0.0)
    mean_other = np.where(counts[None, :] > 0, sums / np.maximum(counts[None, :], 1), np.inf)
    mean_other[np.arange(n), labels] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return np.where(own > 1, s, 0.0)


@_njit
def silhouette_values_numba(dist, labels, n_labels):
    n = dist.shape[0]
    counts = np.zeros(n_labels)
    for i in range(n):
        counts[labels[i]] += 1.0
    s = np.zeros(n)
    sums = np.zeros(n_labels)
    for i in range(n):
        for c in range(n_labels):
            sums[c] = 0.0
        for j in range(n):
            sums[labels[j]] += dist[i, j]
        li = labels[i]
        if counts[li] <= 1.0:
            s[i] = 0.0
            continue
        a = sums[li] / (counts[li] - 1.0)
        b = np.inf
        for c in range(n_labels):
            if c != li and counts[c] > 0.0:
                m = sums[c] / counts[c]
                if m < b:
                    b = m
        denom = max(a, b)
        s[i] = (b - a) / denom if denom > 0.0 else 0.0
    return s


# --- 1-D Gaussian KDE ------------------------------------------------------


def kde_grid_numpy(points, bandwidth, grid):
    u = (grid[:, None] - points[None, :]) / bandwidth
    norm = 1.0 / (points.size * bandwidth * math.sqrt(2.0 * math.pi))
    return norm * np.exp(-0.5 * u * u).sum(axis=1)


@_njit
def kde_grid_numba(points, bandwidth, grid):
    m = grid.size
    n = points.size
    out = np.zeros(m)
    norm = 1.0 / (n * bandwidth * math.sqrt(2.0 * math.pi))
    for g in range(m):
        s = 0.0
        for i in range(n):
            u = (grid[g] - points[i]) / bandwidth
            s += math.exp(-0.5 * u * u)
        out[g] = norm * s
    return out


# auto-mode choice per kernel, from the benchmark
_AUTO = {
    "affine": "numpy",
    "affine_backward": "numpy",
    "softmax": "numba",
    "pairwise_dists": "numpy",
    "silhouette_values": "numba",
    "kde_grid": "numpy",
}

_IMPLS = {
    "affine": (affine_numpy, affine_numba),
    "affine_backward": (affine_backward_numpy, affine_backward_numba),
    "softmax": (softmax_numpy, softmax_numba),
    "pairwise_dists": (pairwise_dists_numpy, pairwise_dists_numba),
    "silhouette_values": (silhouette_values_numpy, silhouette_values_numba),
    "kde_grid": (kde_grid_numpy, kde_grid_numba),
}


def get(name: str, backend: str | None = None):
    """Return kernel ``name`` for ``backend`` (defaults to the active one)."""
    backend = backend or BACKEND
    if backend == "auto":
        backend = _AUTO[name]
    np_impl, nb_impl = _IMPLS[name]
    if backend == "numba" and HAVE_NUMBA:
        return nb_impl
    return np_impl


affine = get("affine")
affine_backward = get("affine_backward")
softmax = get("softmax")
pairwise_dists = get("pairwise_dists")
silhouette_values = get("silhouette_values")
kde_grid = get("kde_grid")
