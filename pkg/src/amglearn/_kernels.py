"""Compiled sparse kernels (numba).

Only the truly sequential inner loops live here; everything vectorizable
is done with numpy/scipy in the calling modules.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def forward_substitution(row_offsets, col_indices, values, r):
    """Solve L d = r in-order, L being the lower triangle of A incl. diagonal.

    Entries with column > row are ignored, so the CSR arrays of the full
    matrix A can be passed directly.
    """
    n = r.shape[0]
    d = np.zeros(n)
    for i in range(n):
        acc = r[i]
        diag = 0.0
        for k in range(row_offsets[i], row_offsets[i + 1]):
            j = col_indices[k]
            if j < i:
                acc -= values[k] * d[j]
            elif j == i:
                diag = values[k]
        d[i] = acc / diag
    return d
