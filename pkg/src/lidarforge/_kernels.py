"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import: numba is used when it imports
cleanly and the ``LIDARFORGE_NO_NUMBA`` environment variable is unset
(or "0").  Both paths produce bitwise-identical results: ties on range
are broken toward the smaller point index in either backend, so forged
datasets do not depend on which backend ran.

``benchmarks/bench_projection.py`` compares the two paths.
"""

from __future__ import annotations

import os

import numpy as np

ENV_FLAG = "LIDARFORGE_NO_NUMBA"


def _numba_requested() -> bool:
    return os.environ.get(ENV_FLAG, "0").strip().lower() not in ("1", "true", "yes")


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag instead
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _numba_requested()


def _scatter_min_numpy(rows, cols, ranges, height, width):
    """Winner-per-cell by minimum range, ties to the smaller index.

    lexsort is stable, so sorting by (cell, range) and taking the first
    entry per cell yields the same winner as a sequential scan.
    """
    n = rows.shape[0]
    cells = rows.astype(np.int64) * width + cols.astype(np.int64)
    order = np.lexsort((ranges, cells))
    first = np.ones(n, dtype=bool)
    first[1:] = cells[order][1:] != cells[order][:-1]
    win_cells = cells[order][first]
    win_index = order[first]

    index_grid = np.full((height, width), -1, dtype=np.int64)
    range_grid = np.full((height, width), np.inf, dtype=np.float64)
    index_grid.ravel()[win_cells] = win_index
    range_grid.ravel()[win_cells] = ranges[order][first]
    return index_grid, range_grid


if HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _scatter_min_numba(rows, cols, ranges, height, width):  # pragma: no cover
        index_grid = np.full((height, width), -1, dtype=np.int64)
        range_grid = np.full((height, width), np.inf, dtype=np.float64)
        for i in range(rows.shape[0]):
            u = rows[i]
            v = cols[i]
            r = ranges[i]
            if r < range_grid[u, v]:
                range_grid[u, v] = r
                index_grid[u, v] = i
        return index_grid, range_grid


def scatter_min(rows: np.ndarray, cols: np.ndarray, ranges: np.ndarray,
                height: int, width: int, backend: str | None = None):
    """Dispatch to the configured backend.

    ``backend`` forces "numba" or "numpy" regardless of the default;
    used by the benchmark and by backend-equivalence tests.
    """
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    ranges = np.ascontiguousarray(ranges, dtype=np.float64)
    if backend is None:
        backend = "numba" if USE_NUMBA else "numpy"
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        return _scatter_min_numba(rows, cols, ranges, height, width)
    if backend == "numpy":
        return _scatter_min_numpy(rows, cols, ranges, height, width)
    raise ValueError(f"unknown backend {backend!r}")
