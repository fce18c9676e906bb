"""Pure-Python/NumPy implementations of the hot loops.

Same signatures and results as the compiled ``_kernels`` module; used when
the extension is unavailable or ``SHS_SENTINEL_PURE=1``.
"""

import numpy as np


def simulate_lti(Ad, Bd, C, D, z0, w):
    """Iterate z <- Ad z + Bd w_l, emitting y_l = C z_l + D w_l.

    Returns (Y, z_final) with Y of shape (len(w), C.shape[0]).
    """
    Ad = np.asarray(Ad, dtype=float)
    Bd = np.asarray(Bd, dtype=float)
    C = np.asarray(C, dtype=float)
    D = np.asarray(D, dtype=float)
    w = np.asarray(w, dtype=float)
    z = np.array(z0, dtype=float)
    steps = w.shape[0]
    Y = np.empty((steps, C.shape[0]))
    for l in range(steps):
        Y[l] = C @ z + D @ w[l]
        z = Ad @ z + Bd @ w[l]
    return Y, z


def propagate(Ad, Bd, z0, w):
    """Final state only; no outputs."""
    z = np.array(z0, dtype=float)
    Ad = np.asarray(Ad, dtype=float)
    Bd = np.asarray(Bd, dtype=float)
    for row in np.asarray(w, dtype=float):
        z = Ad @ z + Bd @ row
    return z


def residual_scan(forced, free, x0, measured, candidates, length):
    """SSE argmin of measured vs forced[c] + free[c] @ x0 over the first
    ``length`` flattened entries, for c in ``candidates``.

    Ties go to the first candidate in order. Returns (position, residual).
    """
    L = int(length)
    y = np.asarray(measured, dtype=float)[:L]
    x0 = np.asarray(x0, dtype=float)
    best = -1
    best_res = np.inf
    for pos, c in enumerate(candidates):
        pred = forced[c, :L] + free[c, :L] @ x0
        d = y - pred
        res = float(d @ d)
        if res < best_res:
            best_res = res
            best = pos
    return best, best_res


def residuals_all(forced, free, x0, measured, candidates, length):
    L = int(length)
    y = np.asarray(measured, dtype=float)[:L]
    out = np.empty(len(candidates))
    for pos, c in enumerate(candidates):
        d = y - (forced[c, :L] + free[c, :L] @ x0)
        out[pos] = d @ d
    return out


def sq_distances(points, x):
    d = np.asarray(points, dtype=float) - np.asarray(x, dtype=float)
    return np.einsum("ij,ij->i", d, d)
