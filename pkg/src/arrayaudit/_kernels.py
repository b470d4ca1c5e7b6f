"""Hot numeric kernels: all-pairs and query-vs-reference Pearson scans.

Two interchangeable backends:

* ``numba``: @njit loop kernels (parallel over rows; each output cell is
  written by exactly one iteration, so results are deterministic).
* ``numpy``: vectorized fallback, always available.

Selection is made once at import from the ``ARRAYAUDIT_KERNELS``
environment variable: ``numba`` and ``numpy`` force one backend for every
kernel; ``auto`` (the default) picks per kernel what benchmarking shows is
fastest: BLAS matmul for the dense scans, the numba loop for the
missing-data (pairwise-complete) scan, where masked numpy is 20-40x
slower. ``benchmarks/bench_kernels.py`` reproduces those measurements and
the test suite asserts the backends agree numerically.

Degenerate (zero-variance) rows/columns yield NaN correlations; callers
decide how to report them.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def _select_backend() -> str:
    choice = os.environ.get("ARRAYAUDIT_KERNELS", "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"ARRAYAUDIT_KERNELS must be auto|numba|numpy, got {choice!r}"
        )
    if choice == "numba" and not HAS_NUMBA:
        raise RuntimeError("ARRAYAUDIT_KERNELS=numba but numba is not importable")
    if choice == "auto" and not HAS_NUMBA:
        return "numpy"
    return choice


BACKEND = _select_backend()


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _standardize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Center rows and scale to unit Euclidean norm; flag degenerate rows."""
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered * centered).sum(axis=1))
    ok = norms > 0.0
    safe = np.where(ok, norms, 1.0)
    return centered / safe[:, None], ok


def column_correlations_numpy(values: np.ndarray) -> np.ndarray:
    """Full n_cols x n_cols Pearson matrix; NaN row/col for zero variance."""
    z, ok = _standardize_rows(np.asarray(values, dtype=np.float64).T)
    corr = np.clip(z @ z.T, -1.0, 1.0)
    corr[~ok, :] = np.nan
    corr[:, ~ok] = np.nan
    np.fill_diagonal(corr, np.where(ok, 1.0, np.nan))
    return corr


def cross_row_correlations_numpy(query: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Pearson correlation of every query row against every reference row."""
    q, qok = _standardize_rows(query)
    r, rok = _standardize_rows(reference)
    corr = np.clip(q @ r.T, -1.0, 1.0)
    corr[~qok, :] = np.nan
    corr[:, ~rok] = np.nan
    return corr


def pairwise_complete_column_correlations_numpy(
    values: np.ndarray, min_overlap: int = 3
) -> np.ndarray:
    """All-pairs column correlations over pairwise-complete observations.

    Pairs with fewer than ``min_overlap`` jointly observed entries, or with
    zero variance on the overlap, come back NaN.
    """
    x = np.asarray(values, dtype=np.float64)
    n = x.shape[1]
    corr = np.full((n, n), np.nan)
    finite = np.isfinite(x)
    for i in range(n):
        corr[i, i] = 1.0 if finite[:, i].sum() >= min_overlap and np.nanstd(x[finite[:, i], i]) > 0 else np.nan
        for j in range(i + 1, n):
            mask = finite[:, i] & finite[:, j]
            if int(mask.sum()) < min_overlap:
                continue
            a = x[mask, i]
            b = x[mask, j]
            a = a - a.mean()
            b = b - b.mean()
            na = np.sqrt((a * a).sum())
            nb = np.sqrt((b * b).sum())
            if na == 0.0 or nb == 0.0:
                continue
            r = float((a * b).sum() / (na * nb))
            r = min(1.0, max(-1.0, r))
            corr[i, j] = r
            corr[j, i] = r
    return corr


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

@njit(cache=True, parallel=True)
def _column_correlations_jit(values: np.ndarray) -> np.ndarray:  # pragma: no cover - compiled
    nfeat, ncol = values.shape
    norms = np.empty(ncol)
    centered = np.empty((ncol, nfeat))
    for j in prange(ncol):
        s = 0.0
        for i in range(nfeat):
            s += values[i, j]
        m = s / nfeat
        ss = 0.0
        for i in range(nfeat):
            c = values[i, j] - m
            centered[j, i] = c
            ss += c * c
        norms[j] = np.sqrt(ss)
    corr = np.empty((ncol, ncol))
    # each (a, b) cell is written by exactly one iteration: deterministic
    for a in prange(ncol):
        if norms[a] == 0.0:
            for b in range(ncol):
                corr[a, b] = np.nan
            continue
        corr[a, a] = 1.0
        for b in range(a + 1, ncol):
            if norms[b] == 0.0:
                corr[a, b] = np.nan
                continue
            dot = 0.0
            for i in range(nfeat):
                dot += centered[a, i] * centered[b, i]
            r = dot / (norms[a] * norms[b])
            if r > 1.0:
                r = 1.0
            elif r < -1.0:
                r = -1.0
            corr[a, b] = r
    for a in range(ncol):
        for b in range(a + 1, ncol):
            corr[b, a] = corr[a, b]
        if norms[a] == 0.0:
            for b in range(ncol):
                corr[b, a] = np.nan
    return corr


@njit(cache=True, parallel=True)
def _cross_row_correlations_jit(query: np.ndarray, reference: np.ndarray) -> np.ndarray:  # pragma: no cover - compiled
    nq, nc = query.shape
    nr = reference.shape[0]

    qc = np.empty((nq, nc))
    qn = np.empty(nq)
    for i in prange(nq):
        s = 0.0
        for k in range(nc):
            s += query[i, k]
        m = s / nc
        ss = 0.0
        for k in range(nc):
            c = query[i, k] - m
            qc[i, k] = c
            ss += c * c
        qn[i] = np.sqrt(ss)

    rc = np.empty((nr, nc))
    rn = np.empty(nr)
    for i in prange(nr):
        s = 0.0
        for k in range(nc):
            s += reference[i, k]
        m = s / nc
        ss = 0.0
        for k in range(nc):
            c = reference[i, k] - m
            rc[i, k] = c
            ss += c * c
        rn[i] = np.sqrt(ss)

    corr = np.empty((nq, nr))
    for i in prange(nq):
        if qn[i] == 0.0:
            for j in range(nr):
                corr[i, j] = np.nan
            continue
        for j in range(nr):
            if rn[j] == 0.0:
                corr[i, j] = np.nan
                continue
            dot = 0.0
            for k in range(nc):
                dot += qc[i, k] * rc[j, k]
            r = dot / (qn[i] * rn[j])
            if r > 1.0:
                r = 1.0
            elif r < -1.0:
                r = -1.0
            corr[i, j] = r
    return corr


@njit(cache=True, parallel=True)
def _pairwise_complete_jit(values: np.ndarray, min_overlap: int) -> np.ndarray:  # pragma: no cover - compiled
    nfeat, ncol = values.shape
    corr = np.full((ncol, ncol), np.nan)
    for a in prange(ncol):
        n_a = 0
        sa = 0.0
        ssa = 0.0
        for i in range(nfeat):
            v = values[i, a]
            if np.isfinite(v):
                n_a += 1
                sa += v
                ssa += v * v
        if n_a >= min_overlap and ssa - sa * sa / n_a > 0.0:
            corr[a, a] = 1.0
        for b in range(a + 1, ncol):
            n = 0
            sx = 0.0
            sy = 0.0
            sxx = 0.0
            syy = 0.0
            sxy = 0.0
            for i in range(nfeat):
                x = values[i, a]
                y = values[i, b]
                if np.isfinite(x) and np.isfinite(y):
                    n += 1
                    sx += x
                    sy += y
                    sxx += x * x
                    syy += y * y
                    sxy += x * y
            if n < min_overlap:
                continue
            vx = sxx - sx * sx / n
            vy = syy - sy * sy / n
            if vx <= 0.0 or vy <= 0.0:
                continue
            r = (sxy - sx * sy / n) / np.sqrt(vx * vy)
            if r > 1.0:
                r = 1.0
            elif r < -1.0:
                r = -1.0
            corr[a, b] = r
    for a in range(ncol):
        for b in range(a + 1, ncol):
            corr[b, a] = corr[a, b]
    return corr


def column_correlations_numba(values: np.ndarray) -> np.ndarray:
    return _column_correlations_jit(np.ascontiguousarray(values, dtype=np.float64))


def cross_row_correlations_numba(query: np.ndarray, reference: np.ndarray) -> np.ndarray:
    return _cross_row_correlations_jit(
        np.ascontiguousarray(query, dtype=np.float64),
        np.ascontiguousarray(reference, dtype=np.float64),
    )


def pairwise_complete_column_correlations_numba(
    values: np.ndarray, min_overlap: int = 3
) -> np.ndarray:
    return _pairwise_complete_jit(
        np.ascontiguousarray(values, dtype=np.float64), min_overlap
    )


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if BACKEND == "numba":
    column_correlations = column_correlations_numba
    cross_row_correlations = cross_row_correlations_numba
    pairwise_complete_column_correlations = pairwise_complete_column_correlations_numba
elif BACKEND == "numpy":
    column_correlations = column_correlations_numpy
    cross_row_correlations = cross_row_correlations_numpy
    pairwise_complete_column_correlations = pairwise_complete_column_correlations_numpy
else:  # auto: fastest measured backend per kernel
    column_correlations = column_correlations_numpy
    cross_row_correlations = cross_row_correlations_numpy
    pairwise_complete_column_correlations = pairwise_complete_column_correlations_numba
