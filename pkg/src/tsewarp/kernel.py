"""Time-weighted DTW forward pass.

Two engines compute the same recurrence (no diagonal transition by default)::

    D[i, j] = dist_w(u[i], a[i], b[j]) + min(D[i-1, j], D[i, j-1])

``reference`` fills the grid row by row and optionally admits the diagonal
predecessor ``D[i-1, j-1]``. ``wavefront`` sweeps anti-diagonals
``l = i + j``; every cell of a diagonal depends only on the previous one,
so a diagonal is a width-2 stride-1 min-pool of its predecessor plus a
vector of pointwise costs. Only the chain of min-pools is serial; the
pointwise costs of all diagonals are computed up front in one vectorized
pass. Both engines accumulate each pointwise cost over features in the
same fixed order, so their grids agree bit for bit.

The first sequence (``a``, carrying the weights ``u``) is the centroid in
the classifier; the second is the sample.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numba
import numpy as np
from numba import njit, prange

from .core import (
    PathShapeMismatch,
    ShapeMismatch,
    Tse,
    WarpingPath,
    stack_samples,
)

# prefer OpenMP; the bundled TBB is often too old and only produces a warning
numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

ENGINES = ("reference", "wavefront")

_MODE_WAVEFRONT = 0
_MODE_REFERENCE = 1


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _dist_w(u, a, ai, b, bj):
    acc = 0.0
    for k in range(a.shape[1]):
        acc += u[ai, k] * abs(a[ai, k] - b[bj, k])
    return acc


@njit(cache=True, nogil=True)
def _reference_grid(a, b, u, allow_diagonal):
    n = a.shape[0]
    m = b.shape[0]
    D = np.empty((n, m), dtype=a.dtype)
    for i in range(n):
        for j in range(m):
            cost = _dist_w(u, a, i, b, j)
            if i == 0 and j == 0:
                D[i, j] = cost
                continue
            best = np.inf
            if i > 0:
                best = D[i - 1, j]
            if j > 0 and D[i, j - 1] < best:
                best = D[i, j - 1]
            if allow_diagonal and i > 0 and j > 0 and D[i - 1, j - 1] < best:
                best = D[i - 1, j - 1]
            D[i, j] = cost + best
    return D


@njit(cache=True, nogil=True)
def _diag_bounds(l, n, m):
    return max(0, l - m + 1), min(n - 1, l)


@njit(cache=True, nogil=True)
def _pointwise_costs(a, b, u):
    """All pointwise costs ``P[i, j] = dist_w(u[i], a[i], b[j])``.

    These are the additive terms of every diagonal. They do not depend on
    the recurrence, so they are produced in one data-parallel pass before
    the serial sweep. The loop runs feature-outer and sample-inner: each
    cell still sums its features in order ``k = 0..N_f-1`` (bit-identical
    to :func:`_dist_w`) while the inner loop vectorizes over ``j``.
    """
    n = a.shape[0]
    m = b.shape[0]
    bT = np.ascontiguousarray(b.T)
    P = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        row = P[i]
        for k in range(a.shape[1]):
            ak = a[i, k]
            uk = u[i, k]
            bk = bT[k]
            for j in range(m):
                row[j] += uk * abs(ak - bk[j])
    return P


@njit(cache=True, nogil=True)
def _wavefront_flat(a, b, u):
    """All diagonals packed back to back; diagonal ``l`` starts at ``offs[l]``."""
    n = a.shape[0]
    m = b.shape[0]
    L = n + m - 1
    offs = np.empty(L + 1, dtype=np.int64)
    offs[0] = 0
    for l in range(L):
        s, e = _diag_bounds(l, n, m)
        offs[l + 1] = offs[l] + e - s + 1
    flat = np.empty(offs[L], dtype=a.dtype)
    P = _pointwise_costs(a, b, u)
    flat[0] = P[0, 0]
    for l in range(1, L):
        s, e = _diag_bounds(l, n, m)
        ps, pe = _diag_bounds(l - 1, n, m)
        prev = offs[l - 1]
        cur = offs[l]
        for t in range(s, e + 1):
            # min-pool over the previous diagonal (padded with +inf) at rows t-1, t
            up = flat[prev + t - 1 - ps] if t - 1 >= ps else np.inf
            left = flat[prev + t - ps] if t <= pe else np.inf
            flat[cur + t - s] = P[t, l - t] + min(up, left)
    return flat, offs


@njit(cache=True, nogil=True)
def _wavefront_distance(a, b, u):
    """Distance only; the sweep keeps two diagonals."""
    n = a.shape[0]
    m = b.shape[0]
    width = min(n, m)
    P = _pointwise_costs(a, b, u)
    prev = np.empty(width, dtype=a.dtype)
    cur = np.empty(width, dtype=a.dtype)
    prev[0] = P[0, 0]
    ps, pe = 0, 0
    for l in range(1, n + m - 1):
        s, e = _diag_bounds(l, n, m)
        for t in range(s, e + 1):
            up = prev[t - 1 - ps] if t - 1 >= ps else np.inf
            left = prev[t - ps] if t <= pe else np.inf
            cur[t - s] = P[t, l - t] + min(up, left)
        prev, cur = cur, prev
        ps, pe = s, e
    return prev[0]


@njit(cache=True, nogil=True)
def _backtrack_grid(D, allow_diagonal, rows, cols):
    """Write the path into ``rows/cols`` (capacity n+m-1); return its length."""
    n, m = D.shape
    i, j = n - 1, m - 1
    k = 0
    rows[k] = i
    cols[k] = j
    while i > 0 or j > 0:
        # ties prefer (i-1, j), then (i, j-1), then (i-1, j-1)
        best = np.inf
        ni, nj = i, j
        if i > 0:
            best = D[i - 1, j]
            ni, nj = i - 1, j
        if j > 0 and D[i, j - 1] < best:
            best = D[i, j - 1]
            ni, nj = i, j - 1
        if allow_diagonal and i > 0 and j > 0 and D[i - 1, j - 1] < best:
            ni, nj = i - 1, j - 1
        i, j = ni, nj
        k += 1
        rows[k] = i
        cols[k] = j
    length = k + 1
    for q in range(length // 2):
        r = length - 1 - q
        rows[q], rows[r] = rows[r], rows[q]
        cols[q], cols[r] = cols[r], cols[q]
    return length


@njit(cache=True, nogil=True)
def _backtrack_flat(flat, offs, n, m, rows, cols):
    i, j = n - 1, m - 1
    k = n + m - 2
    rows[k] = i
    cols[k] = j
    while k > 0:
        l = i + j
        ps, pe = _diag_bounds(l - 1, n, m)
        base = offs[l - 1]
        up = flat[base + i - 1 - ps] if i > 0 else np.inf
        left = flat[base + i - ps] if j > 0 else np.inf
        if i > 0 and up <= left:
            i -= 1
        else:
            j -= 1
        k -= 1
        rows[k] = i
        cols[k] = j
    return n + m - 1


@njit(cache=True, parallel=True)
def _batch_paths(X, x_off, x_len, C, U, pair_s, pair_c, mode, allow_diagonal,
                 dist_out, rows_out, cols_out, path_off, path_len):
    for p in prange(pair_s.shape[0]):
        s = pair_s[p]
        c = pair_c[p]
        a = C[c]
        u = U[c]
        b = X[x_off[s]:x_off[s] + x_len[s]]
        n = a.shape[0]
        m = b.shape[0]
        rows = rows_out[path_off[p]:path_off[p] + n + m - 1]
        cols = cols_out[path_off[p]:path_off[p] + n + m - 1]
        if mode == 0:
            flat, offs = _wavefront_flat(a, b, u)
            dist_out[p] = flat[flat.shape[0] - 1]
            path_len[p] = _backtrack_flat(flat, offs, n, m, rows, cols)
        else:
            D = _reference_grid(a, b, u, allow_diagonal)
            dist_out[p] = D[n - 1, m - 1]
            path_len[p] = _backtrack_grid(D, allow_diagonal, rows, cols)


@njit(cache=True, parallel=True)
def _batch_wavefront_distances(X, x_off, x_len, C, U, pair_s, pair_c, out):
    for p in prange(pair_s.shape[0]):
        s = pair_s[p]
        c = pair_c[p]
        out[p] = _wavefront_distance(C[c], X[x_off[s]:x_off[s] + x_len[s]], U[c])


@njit(cache=True)
def _batch_reference_distances(X, x_off, x_len, C, U, pair_s, pair_c, allow_diagonal, out):
    for p in range(pair_s.shape[0]):
        s = pair_s[p]
        c = pair_c[p]
        a = C[c]
        D = _reference_grid(a, X[x_off[s]:x_off[s] + x_len[s]], U[c], allow_diagonal)
        out[p] = D[D.shape[0] - 1, D.shape[1] - 1]


@njit(cache=True, parallel=True)
def _batch_decompose(X, x_off, C, pair_s, pair_c, rows_all, cols_all, path_off, path_len, S, B):
    nf = C.shape[2]
    for p in prange(pair_s.shape[0]):
        s = pair_s[p]
        c = pair_c[p]
        base = x_off[s]
        for q in range(path_off[p], path_off[p] + path_len[p]):
            i = rows_all[q]
            j = cols_all[q]
            for f in range(nf):
                d = C[c, i, f] - X[base + j, f]
                if d > 0.0:
                    S[p, i, f] += 1.0
                    B[p, i, f] -= X[base + j, f]
                elif d < 0.0:
                    S[p, i, f] -= 1.0
                    B[p, i, f] += X[base + j, f]


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostGrid:
    D: np.ndarray  # (n, m) cumulative costs
    allow_diagonal: bool = False

    def at(self, i, j):
        n, m = self.D.shape
        if 0 <= i < n and 0 <= j < m:
            return self.D[i, j]
        return np.inf


@dataclass(frozen=True)
class DiagonalState:
    l: int
    start: int
    end: int
    values: np.ndarray


@dataclass(frozen=True)
class PathDecomposition:
    S: np.ndarray  # slope, (T_c, N_f)
    B: np.ndarray  # intercept, (T_c, N_f)

    def reconstruct(self, u, c) -> float:
        return float(np.sum(u * (c * self.S + self.B)))


def _arr(x, dtype=None):
    a = x.data if isinstance(x, Tse) else x
    a = np.asarray(a)
    if dtype is None:
        dtype = np.float32 if a.dtype == np.float32 else np.float64
    return np.ascontiguousarray(a, dtype=dtype)


def _prepare(a, b, u):
    a = _arr(a)
    b = _arr(b, a.dtype)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch("sequences must be 2-d (T, N_f)")
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise ShapeMismatch("sequences must have at least one timestep")
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"feature widths differ: {a.shape[1]} vs {b.shape[1]}")
    if u is None:
        u = np.ones_like(a)
    else:
        u = _arr(u, a.dtype)
        if u.shape != a.shape:
            raise ShapeMismatch(f"weights shape {u.shape} != first sequence shape {a.shape}")
    return a, b, u


def dist_w_point(u_row, a_row, b_row) -> float:
    """Weighted Manhattan cost ``sum_k u_k |a_k - b_k|`` between two rows."""
    a = _arr(np.atleast_2d(a_row))
    b = _arr(np.atleast_2d(b_row), a.dtype)
    u = _arr(np.atleast_2d(u_row), a.dtype)
    if not (a.shape == b.shape == u.shape):
        raise ShapeMismatch("row shapes differ")
    return float(_dist_w(u, a, 0, b, 0))


def dtw_reference(a, b, u=None, allow_diagonal: bool = False):
    """Row-major DTW. Returns ``(distance, CostGrid)``; ``u=None`` means unweighted."""
    a, b, u = _prepare(a, b, u)
    D = _reference_grid(a, b, u, bool(allow_diagonal))
    return float(D[-1, -1]), CostGrid(D, bool(allow_diagonal))


def dtw_wavefront(a, b, u=None):
    """Anti-diagonal DTW. Returns ``(distance, [DiagonalState, ...])``."""
    a, b, u = _prepare(a, b, u)
    n, m = a.shape[0], b.shape[0]
    flat, offs = _wavefront_flat(a, b, u)
    diagonals = []
    for l in range(n + m - 1):
        s, e = max(0, l - m + 1), min(n - 1, l)
        diagonals.append(DiagonalState(l, s, e, flat[offs[l]:offs[l + 1]].copy()))
    return float(flat[-1]), diagonals


def dtw_distance(a, b, u=None, *, engine: str = "wavefront", allow_diagonal: bool = False) -> float:
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}")
    if engine == "wavefront":
        if allow_diagonal:
            raise ValueError("the wavefront engine has no diagonal transition")
        a, b, u = _prepare(a, b, u)
        return float(_wavefront_distance(a, b, u))
    return dtw_reference(a, b, u, allow_diagonal)[0]


def extract_path(result) -> WarpingPath:
    """Backtrack the optimal path from a :class:`CostGrid` or a diagonal list.

    At ties the predecessor ``(i-1, j)`` wins over ``(i, j-1)`` (and the
    diagonal predecessor comes last when it is allowed).
    """
    if isinstance(result, tuple) and len(result) == 2 and not isinstance(result[0], DiagonalState):
        result = result[1]
    if isinstance(result, CostGrid):
        n, m = result.D.shape
        rows = np.empty(n + m - 1, dtype=np.int64)
        cols = np.empty(n + m - 1, dtype=np.int64)
        k = _backtrack_grid(result.D, result.allow_diagonal, rows, cols)
        return WarpingPath(rows[:k], cols[:k], (n, m))
    diagonals = list(result)
    last = diagonals[-1]
    n = last.end + 1
    m = last.l - n + 2
    offs = np.zeros(len(diagonals) + 1, dtype=np.int64)
    offs[1:] = np.cumsum([len(d.values) for d in diagonals])
    flat = np.concatenate([d.values for d in diagonals])
    rows = np.empty(n + m - 1, dtype=np.int64)
    cols = np.empty(n + m - 1, dtype=np.int64)
    _backtrack_flat(flat, offs, n, m, rows, cols)
    return WarpingPath(rows, cols, (n, m))


def decompose_path(path: WarpingPath, c, sample) -> PathDecomposition:
    """Slope/intercept tensors of ``c`` along ``path``.

    Each path cell contributes ``u * |c - m| = u * (c * s - s * m)`` with
    ``s = sign(c - m)``; ``s`` accumulates into ``S`` and ``-s * m`` into ``B``.
    """
    c = _arr(c, np.float64)
    m = _arr(sample, np.float64)
    if c.shape[1] != m.shape[1] or path.shape != (c.shape[0], m.shape[0]):
        raise PathShapeMismatch(
            f"path for grid {path.shape} does not fit centroid {c.shape} and sample {m.shape}")
    X, x_off, _ = stack_samples([m])
    S = np.zeros((1,) + c.shape)
    B = np.zeros((1,) + c.shape)
    _batch_decompose(X, x_off, c[None], np.zeros(1, np.int64), np.zeros(1, np.int64),
                     np.ascontiguousarray(path.rows, dtype=np.int64),
                     np.ascontiguousarray(path.cols, dtype=np.int64),
                     np.zeros(1, np.int64), np.array([len(path)], np.int64), S, B)
    return PathDecomposition(S[0], B[0])


def set_workers(workers: Optional[int]) -> int:
    """Bound the compiled kernels' thread count; returns the count in effect."""
    limit = numba.config.NUMBA_NUM_THREADS
    n = limit if workers is None else max(1, min(int(workers), limit))
    numba.set_num_threads(n)
    return n


def _class_params(centroids, weights):
    C = centroids.data if hasattr(centroids, "data") and not isinstance(centroids, np.ndarray) else centroids
    C = np.ascontiguousarray(C, dtype=np.float64)
    if C.ndim != 3:
        raise ShapeMismatch(f"centroids must be (N_c, T_c, N_f), got {C.shape}")
    if weights is None:
        U = np.ones_like(C)
    else:
        U = np.ascontiguousarray(weights, dtype=np.float64)
        if U.shape != C.shape:
            raise ShapeMismatch(f"weights shape {U.shape} != centroid shape {C.shape}")
    return C, U


def _check_samples(samples, nf):
    for s in samples:
        data = s.data if isinstance(s, Tse) else np.asarray(s)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] != nf:
            sid = getattr(s, "id", "")
            raise ShapeMismatch(f"sample {sid!r} has shape {data.shape}, expected (T>=1, {nf})")


def _all_pairs(n_samples, n_classes):
    pair_s = np.repeat(np.arange(n_samples, dtype=np.int64), n_classes)
    pair_c = np.tile(np.arange(n_classes, dtype=np.int64), n_samples)
    return pair_s, pair_c


def batch_distances(samples: Sequence, centroids, weights=None, *, engine: str = "wavefront",
                    allow_diagonal: bool = False, workers: Optional[int] = None) -> np.ndarray:
    """Logit matrix ``z[s, c] = D_w(U[c], C[c], samples[s])``.

    Pairs are independent, so the wavefront engine evaluates them on up to
    ``workers`` threads; the result does not depend on the schedule.
    """
    C, U = _class_params(centroids, weights)
    if engine == "wavefront" and allow_diagonal:
        raise ValueError("the wavefront engine has no diagonal transition")
    if len(samples) == 0:
        return np.zeros((0, C.shape[0]))
    _check_samples(samples, C.shape[2])
    X, x_off, x_len = stack_samples(samples)
    pair_s, pair_c = _all_pairs(len(samples), C.shape[0])
    out = np.empty(len(pair_s))
    if engine == "wavefront":
        set_workers(workers)
        _batch_wavefront_distances(X, x_off, x_len, C, U, pair_s, pair_c, out)
    elif engine == "reference":
        _batch_reference_distances(X, x_off, x_len, C, U, pair_s, pair_c, bool(allow_diagonal), out)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    return out.reshape(len(samples), C.shape[0])


@dataclass
class PathBatch:
    """Optimal paths for every ``(sample, class)`` pair of a batch.

    Pair ``p = s * N_c + c``; its cells are
    ``rows[off[p]:off[p] + length[p]]`` / ``cols[...]``.
    """

    distances: np.ndarray  # (n_samples, N_c)
    rows: np.ndarray
    cols: np.ndarray
    off: np.ndarray
    length: np.ndarray
    n_classes: int

    def path(self, s: int, c: int, centroid_len: int, sample_len: int) -> WarpingPath:
        p = s * self.n_classes + c
        sl = slice(self.off[p], self.off[p] + self.length[p])
        return WarpingPath(self.rows[sl].copy(), self.cols[sl].copy(), (centroid_len, sample_len))


def batch_paths(samples: Sequence, centroids, weights=None, *, engine: str = "wavefront",
                allow_diagonal: bool = False, workers: Optional[int] = None) -> PathBatch:
    C, U = _class_params(centroids, weights)
    if engine == "wavefront" and allow_diagonal:
        raise ValueError("the wavefront engine has no diagonal transition")
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}")
    _check_samples(samples, C.shape[2])
    X, x_off, x_len = stack_samples(samples)
    n_c, t_c = C.shape[0], C.shape[1]
    pair_s, pair_c = _all_pairs(len(samples), n_c)
    cap = t_c + x_len[pair_s] - 1
    off = np.zeros(len(pair_s), dtype=np.int64)
    if len(pair_s):
        off[1:] = np.cumsum(cap)[:-1]
    total = int(cap.sum())
    rows = np.empty(total, dtype=np.int64)
    cols = np.empty(total, dtype=np.int64)
    length = np.empty(len(pair_s), dtype=np.int64)
    dist = np.empty(len(pair_s))
    set_workers(workers)
    mode = _MODE_WAVEFRONT if engine == "wavefront" else _MODE_REFERENCE
    _batch_paths(X, x_off, x_len, C, U, pair_s, pair_c, mode, bool(allow_diagonal),
                 dist, rows, cols, off, length)
    return PathBatch(dist.reshape(len(samples), n_c), rows, cols, off, length, n_c)


def batch_decompose(samples: Sequence, centroids, paths: PathBatch) -> tuple:
    """Slope and intercept tensors, shape ``(n_samples, N_c, T_c, N_f)``, for
    the live ``centroids`` along the (possibly frozen) ``paths``."""
    C = np.ascontiguousarray(centroids, dtype=np.float64)
    X, x_off, _ = stack_samples(samples)
    n_s, (n_c, t_c, nf) = len(samples), C.shape
    pair_s, pair_c = _all_pairs(n_s, n_c)
    S = np.zeros((n_s * n_c, t_c, nf))
    B = np.zeros((n_s * n_c, t_c, nf))
    _batch_decompose(X, x_off, C, pair_s, pair_c, paths.rows, paths.cols, paths.off, paths.length, S, B)
    return S.reshape(n_s, n_c, t_c, nf), B.reshape(n_s, n_c, t_c, nf)


def default_workers() -> int:
    return min(os.cpu_count() or 1, numba.config.NUMBA_NUM_THREADS)
