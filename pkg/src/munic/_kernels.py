"""Compiled inner loops for the squared-norm statistics.

Both routines walk the pairs ``a <= b`` in the same order and keep the
diagonal and off-diagonal sums apart, so a subset's value does not depend on
whether it was computed alone or alongside the rest of its family.
"""

import numpy as np
from numba import njit

THIRD = 1.0 / 3.0


@njit(cache=True, nogil=True)
def _kernel(x, y):
    return (x * x + y * y) * 0.5 - max(x, y) + THIRD


@njit(cache=True, nogil=True)
def sq_norms_shared(X, parent, coord, out):
    """Squared norms for a closed set of subsets, batched over samples.

    ``X`` has shape (B, n, p).  Entry ``i`` of ``parent``/``coord`` describes
    subset ``i`` as ``subset[parent[i]]`` plus coordinate ``coord[i]``
    (``parent[i] == -1`` for singletons); parents always precede children.
    """
    B, n, p = X.shape
    m = parent.shape[0]
    k = np.empty(p)
    prod = np.empty(m)
    diag = np.empty(m)
    off = np.empty(m)
    for s in range(B):
        diag[:] = 0.0
        off[:] = 0.0
        for a in range(n):
            for b in range(a, n):
                for j in range(p):
                    k[j] = _kernel(X[s, a, j], X[s, b, j])
                for i in range(m):
                    if parent[i] < 0:
                        prod[i] = k[coord[i]]
                    else:
                        prod[i] = prod[parent[i]] * k[coord[i]]
                if a == b:
                    for i in range(m):
                        diag[i] += prod[i]
                else:
                    for i in range(m):
                        off[i] += prod[i]
        for i in range(m):
            out[s, i] = (diag[i] + 2.0 * off[i]) / n


@njit(cache=True, nogil=True)
def sq_norm_direct(X, coords):
    """Single-subset squared norm with the product formed afresh for every pair."""
    n = X.shape[0]
    diag = 0.0
    off = 0.0
    for a in range(n):
        for b in range(a, n):
            v = 1.0
            for j in coords:
                v *= _kernel(X[a, j], X[b, j])
            if a == b:
                diag += v
            else:
                off += v
    return (diag + 2.0 * off) / n
