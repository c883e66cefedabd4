"""NumPy implementations of the hot kernels.

These mirror ``_kernels.pyx`` operation for operation and are used when the
compiled extension is unavailable or ``BRANCHLAB_PURE_PYTHON=1`` is set.
"""

import numpy as np

# Variable states shared with the compiled kernel.
BASIC = 0
AT_LOWER = 1
AT_UPPER = 2
FREE = 3

OPTIMAL = 0
UNBOUNDED = 1
ITER_LIMIT = 2

RATIO_TIE = 1e-12
DEGENERATE_STEP = 1e-12


def simplex_iterate(T, d, x, lo, hi, basis, state, max_iter, bland_after, tol_dual, tol_piv, counters):
    """Run bounded-variable primal simplex iterations on a dense tableau.

    Everything is updated in place. ``counters`` holds
    ``[iterations, degenerate_steps, bland_mode]``. Returns one of
    ``OPTIMAL``, ``UNBOUNDED`` or ``ITER_LIMIT``.
    """
    m = T.shape[0]
    while True:
        if counters[0] >= max_iter:
            return ITER_LIMIT
        movable = lo < hi
        up = ((state == AT_LOWER) | (state == FREE)) & (d < -tol_dual) & movable
        down = ((state == AT_UPPER) | (state == FREE)) & (d > tol_dual) & movable
        elig = up | down
        if not elig.any():
            return OPTIMAL
        if counters[2]:
            k = int(np.argmax(elig))
        else:
            k = int(np.argmax(np.where(elig, np.abs(d), -1.0)))
        direction = 1.0 if up[k] else -1.0

        if state[k] == FREE:
            theta_flip = np.inf
        else:
            theta_flip = hi[k] - lo[k]

        col = T[:, k]
        alpha = direction * col
        xb = x[basis]
        lb = lo[basis]
        ub = hi[basis]
        ratios = np.full(m, np.inf)
        pos = (alpha > tol_piv) & np.isfinite(lb)
        neg = (alpha < -tol_piv) & np.isfinite(ub)
        ratios[pos] = (xb[pos] - lb[pos]) / alpha[pos]
        ratios[neg] = (ub[neg] - xb[neg]) / (-alpha[neg])
        np.maximum(ratios, 0.0, out=ratios)
        best = ratios.min() if m else np.inf

        if best == np.inf and theta_flip == np.inf:
            return UNBOUNDED
        if theta_flip <= best:
            # entering variable reaches its opposite bound first
            delta = direction * theta_flip
            x[basis] -= col * delta
            if state[k] == AT_LOWER:
                state[k] = AT_UPPER
                x[k] = hi[k]
            else:
                state[k] = AT_LOWER
                x[k] = lo[k]
            counters[0] += 1
            continue

        ties = ratios <= best + RATIO_TIE
        if counters[2]:
            r = int(np.argmin(np.where(ties, basis, np.iinfo(np.int64).max)))
        else:
            r = int(np.argmax(np.where(ties, np.abs(alpha), -1.0)))
        theta = ratios[r]
        delta = direction * theta
        x[k] += delta
        x[basis] -= col * delta

        leaving = basis[r]
        if alpha[r] > 0:
            state[leaving] = AT_LOWER
            x[leaving] = lo[leaving]
        else:
            state[leaving] = AT_UPPER
            x[leaving] = hi[leaving]

        colk = col.copy()
        prow = T[r] / T[r, k]
        T -= np.outer(colk, prow)
        T[r] = prow
        d -= d[k] * prow
        basis[r] = k
        state[k] = BASIC

        if theta <= DEGENERATE_STEP:
            counters[1] += 1
            if counters[1] >= bland_after:
                counters[2] = 1
        counters[0] += 1


def scatter_add(out, idx, src):
    """``out[idx[k]] += src[k]`` row by row, in index order."""
    np.add.at(out, idx, src)
