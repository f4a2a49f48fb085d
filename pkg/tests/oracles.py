"""Independent reference implementations used only by the tests.

Written from textbook definitions without reusing package internals; the
finite-difference check calls only the forward loss it differentiates.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache

import numpy as np

from kancim.spline import evaluate_loss


def cox_de_boor(x, K: int, G: int, lo=0, hi=1, exact: bool = False):
    """All K+G degree-K B-splines at ``x`` via the plain recursion.

    Knots t_j = lo + (j - K) h, j = 0 .. G + 2K. The right domain end is
    treated as belonging to the last interval.
    """
    num = Fraction if exact else float
    lo, hi, x = num(lo), num(hi), num(x)
    h = (hi - lo) / G
    t = [lo + (j - K) * h for j in range(G + 2 * K + 1)]
    last = G + K - 1  # index of the interval [hi - h, hi]

    @lru_cache(maxsize=None)
    def B(i, k):
        if k == 0:
            if x == hi:
                return num(1) if i == last else num(0)
            return num(1) if t[i] <= x < t[i + 1] else num(0)
        left = (x - t[i]) / (t[i + k] - t[i]) * B(i, k - 1)
        right = (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * B(i + 1, k - 1)
        return left + right

    return [B(i, K) for i in range(K + G)]


def naive_layer(coeffs, base_weights, K, G, lo, hi, x):
    """Triple-loop KAN layer: relu base plus per-edge spline sums."""
    out_dim, in_dim, nb = coeffs.shape
    y = np.zeros(out_dim)
    for o in range(out_dim):
        for j in range(in_dim):
            b = cox_de_boor(min(max(x[j], lo), hi), K, G, lo, hi)
            y[o] += base_weights[o, j] * max(x[j], 0.0)
            for i in range(nb):
                y[o] += coeffs[o, j, i] * b[i]
    return y


def direct_basis_codes(code: int, K: int, G: int, local_codes: int, bits: int):
    """Quantized basis vector at input code ``code`` straight from the recursion.

    Code c sits at the centre of its cell: (2c + 1) / (2 * local_codes) knot
    intervals from the domain start.
    """
    x = Fraction(2 * code + 1, 2 * local_codes)
    vals = cox_de_boor(x, K, G, 0, G, exact=True)
    return [round(v * ((1 << bits) - 1)) for v in vals]


def hemi_entry_count(local_codes: int, K: int) -> int:
    """Distinct table cells after identifying (u, piece) with its mirror image."""
    cells = set()
    for u in range(local_codes):
        for l in range(K + 1):
            cells.add(min((u, l), (local_codes - 1 - u, K - l)))
    return len(cells)


def dense_ladder(cond, v_drive, wire_r, v_clamp):
    """Nodal analysis with a dense solve. Returns per-cell currents."""
    R = len(cond)
    gw = 1.0 / wire_r
    A = np.zeros((R, R))
    b = np.zeros(R)
    for k in range(R):
        A[k, k] += cond[k]
        b[k] += cond[k] * v_drive[k]
        # segment towards the clamp
        A[k, k] += gw
        if k == 0:
            b[k] += gw * v_clamp
        else:
            A[k, k - 1] -= gw
        # segment away from the clamp
        if k + 1 < R:
            A[k, k] += gw
            A[k, k + 1] -= gw
    V = np.linalg.solve(A, b)
    return np.asarray(cond) * (np.asarray(v_drive) - V), V


def fd_sensitivity(model, X, Y, h=1e-6):
    """Per-sample central differences of the loss in every spline coefficient."""
    out = []
    for layer in model.layers:
        c = layer.coeffs
        acc = 0.0
        for s in range(len(X)):
            x, y = X[s:s + 1], Y[s:s + 1]
            tot = 0.0
            for idx in np.ndindex(c.shape):
                old = c[idx]
                c[idx] = old + h
                up = evaluate_loss(model, x, y)
                c[idx] = old - h
                down = evaluate_loss(model, x, y)
                c[idx] = old
                tot += ((up - down) / (2 * h)) ** 2
            acc += tot / c.size
        out.append(acc / len(X))
    return out
