"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The numpy implementations are the reference semantics; the numba kernels
compute the same quantities with explicit loops and are selected by
default when numba imports cleanly. Set ``ANONCODEC_DISABLE_NUMBA=1``
to force the numpy path (also used automatically when numba is absent).
``benchmarks/bench_accel.py`` compares the two.

Tie-breaking and zero handling are part of the kernel contracts:

* ``nearest_codeword`` returns the lowest index among cosine-score ties;
  a zero-norm query scores 0 against every codeword and therefore maps
  to index 0.
* ``diagonal_ranks`` counts strictly-greater similarities, and resolves
  ties either by row index (entries with a lower index sort first) or by
  average rank.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("ANONCODEC_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag instead
    _HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        def wrap(func):
            return func

        return wrap


USE_NUMBA = _HAVE_NUMBA and not _DISABLE


# ---------------------------------------------------------------------------
# numpy reference implementations


def nearest_codeword_np(queries: np.ndarray, codewords: np.ndarray) -> np.ndarray:
    """Cosine-similarity argmax of each query row against all codewords."""
    q_norm = np.linalg.norm(queries, axis=1)
    c_norm = np.linalg.norm(codewords, axis=1)
    safe_q = np.where(q_norm > 0.0, q_norm, 1.0)
    scores = (queries / safe_q[:, None]) @ (codewords / c_norm[:, None]).T
    scores[q_norm == 0.0, :] = 0.0
    return np.argmax(scores, axis=1).astype(np.int64)


def diagonal_ranks_np(sims: np.ndarray, tie_average: bool = False) -> np.ndarray:
    """Rank of each diagonal entry within its row, descending order."""
    diag = np.diagonal(sims)
    greater = (sims > diag[:, None]).sum(axis=1)
    if tie_average:
        equal = (sims == diag[:, None]).sum(axis=1) - 1
        return 1.0 + greater + equal / 2.0
    n = sims.shape[0]
    idx = np.arange(n)
    tie_before = ((sims == diag[:, None]) & (idx[None, :] < idx[:, None])).sum(axis=1)
    return (1 + greater + tie_before).astype(np.float64)


def scatter_add_rows_np(indices: np.ndarray, rows: np.ndarray, out: np.ndarray) -> None:
    """Accumulate ``rows[t]`` into ``out[indices[t]]`` in place."""
    np.add.at(out, indices, rows)


# ---------------------------------------------------------------------------
# numba kernels (same contracts, explicit loops)


@_njit(cache=True)
def _nearest_codeword_nb(queries, c_unit):  # pragma: no cover - jitted
    n, m = queries.shape
    k = c_unit.shape[0]
    out = np.empty(n, dtype=np.int64)
    for t in range(n):
        qn = 0.0
        for d in range(m):
            qn += queries[t, d] * queries[t, d]
        qn = np.sqrt(qn)
        if qn == 0.0:
            out[t] = 0
            continue
        best = -np.inf
        best_k = 0
        for j in range(k):
            s = 0.0
            for d in range(m):
                s += queries[t, d] * c_unit[j, d]
            s /= qn
            if s > best:
                best = s
                best_k = j
        out[t] = best_k
    return out


def nearest_codeword_nb(queries: np.ndarray, codewords: np.ndarray) -> np.ndarray:
    c_norm = np.linalg.norm(codewords, axis=1)
    return _nearest_codeword_nb(
        np.ascontiguousarray(queries), np.ascontiguousarray(codewords / c_norm[:, None])
    )


@_njit(cache=True)
def _diagonal_ranks_nb(sims, tie_average):  # pragma: no cover - jitted
    n = sims.shape[0]
    out = np.empty(n, dtype=np.float64)
    for s in range(n):
        d = sims[s, s]
        greater = 0
        tie = 0
        tie_before = 0
        for j in range(n):
            v = sims[s, j]
            if v > d:
                greater += 1
            elif v == d:
                tie += 1
                if j < s:
                    tie_before += 1
        if tie_average:
            out[s] = 1.0 + greater + (tie - 1) / 2.0
        else:
            out[s] = 1.0 + greater + tie_before
    return out


def diagonal_ranks_nb(sims: np.ndarray, tie_average: bool = False) -> np.ndarray:
    return _diagonal_ranks_nb(np.ascontiguousarray(sims), tie_average)


@_njit(cache=True)
def _scatter_add_rows_nb(indices, rows, out):  # pragma: no cover - jitted
    for t in range(indices.shape[0]):
        k = indices[t]
        for d in range(rows.shape[1]):
            out[k, d] += rows[t, d]


def scatter_add_rows_nb(indices: np.ndarray, rows: np.ndarray, out: np.ndarray) -> None:
    _scatter_add_rows_nb(np.ascontiguousarray(indices), np.ascontiguousarray(rows), out)


# ---------------------------------------------------------------------------
# backend selection

if USE_NUMBA:
    nearest_codeword = nearest_codeword_nb
    diagonal_ranks = diagonal_ranks_nb
    scatter_add_rows = scatter_add_rows_nb
else:
    nearest_codeword = nearest_codeword_np
    diagonal_ranks = diagonal_ranks_np
    scatter_add_rows = scatter_add_rows_np


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
