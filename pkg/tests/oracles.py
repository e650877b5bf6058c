"""Independent reference implementations used only to check the library.

These deliberately avoid the library's code paths: the transportation LP is
a hand-rolled dense simplex (northwest-corner start, Bland's rule), and the
convolution oracle is straight quadruple loops.
"""

from __future__ import annotations

import numpy as np


# ---------------------------------------------------------------------------
# brute-force transportation LP
# ---------------------------------------------------------------------------

def _northwest_corner(p: np.ndarray, q: np.ndarray):
    m, n = len(p), len(q)
    x = np.zeros((m, n))
    cells = []
    a, b = p.astype(float).copy(), q.astype(float).copy()
    i = j = 0
    while True:
        cells.append((i, j))
        t = min(a[i], b[j])
        x[i, j] = t
        a[i] -= t
        b[j] -= t
        if i == m - 1 and j == n - 1:
            break
        if a[i] <= b[j] and i < m - 1:
            i += 1
        elif j < n - 1:
            j += 1
        else:
            i += 1
    return x, cells


def transport_lp(p: np.ndarray, q: np.ndarray, cost: np.ndarray,
                 tol: float = 1e-11, max_iter: int = 100000) -> float:
    """Exact minimum transport cost via dense simplex with Bland's rule.

    ``p`` (length m) and ``q`` (length n) must have equal totals; ``cost``
    is the m x n ground-distance matrix.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    m, n = len(p), len(q)
    assert abs(p.sum() - q.sum()) < 1e-9
    nv = m * n
    # equality rows: m supplies plus n-1 demands (the last one is redundant)
    rows = m + n - 1
    a_eq = np.zeros((rows, nv))
    for i in range(m):
        a_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n - 1):
        a_eq[m + j, j::n] = 1.0
    b_eq = np.concatenate([p, q[:-1]])

    x0, cells = _northwest_corner(p, q)
    basis = [i * n + j for i, j in cells]
    assert len(basis) == rows

    c = cost.reshape(-1).astype(float)
    basis_mat = a_eq[:, basis]
    tableau = np.linalg.solve(basis_mat, np.hstack([a_eq, b_eq.reshape(-1, 1)]))

    for _ in range(max_iter):
        cb = c[np.array(basis)]
        reduced = cb @ tableau[:, :nv] - c
        entering = np.flatnonzero(reduced > tol)
        if len(entering) == 0:
            break
        j = entering.min()  # Bland's rule
        col = tableau[:, j]
        pos = np.flatnonzero(col > tol)
        assert len(pos) > 0, "transportation LP cannot be unbounded"
        ratios = tableau[pos, nv] / col[pos]
        rmin = ratios.min()
        ties = pos[ratios <= rmin + 1e-12 + 1e-9 * abs(rmin)]
        leave = ties[np.argmin([basis[r] for r in ties])]
        tableau[leave] /= tableau[leave, j]
        for r in range(rows):
            if r != leave and tableau[r, j] != 0.0:
                tableau[r] -= tableau[r, j] * tableau[leave]
        basis[leave] = j
    else:  # pragma: no cover
        raise AssertionError("simplex did not converge")

    x = np.zeros(nv)
    x[np.array(basis)] = np.maximum(tableau[:, nv], 0.0)
    return float(c @ x)


def grid_ground_distance(h: int, w: int, metric: str = "euclidean") -> np.ndarray:
    rows, cols = np.divmod(np.arange(h * w), w)
    dr = np.abs(rows[:, None] - rows[None, :]).astype(float)
    dc = np.abs(cols[:, None] - cols[None, :]).astype(float)
    return np.sqrt(dr ** 2 + dc ** 2) if metric == "euclidean" else dr + dc


def emd_2d_lp(p: np.ndarray, q: np.ndarray, metric: str = "euclidean") -> float:
    h, w = p.shape
    return transport_lp(p.reshape(-1), q.reshape(-1), grid_ground_distance(h, w, metric))


def emd_1d_lp(p: np.ndarray, q: np.ndarray) -> float:
    n = len(p)
    cost = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :]).astype(float)
    return transport_lp(p, q, cost)


# ---------------------------------------------------------------------------
# naive layer references
# ---------------------------------------------------------------------------

def conv2d_naive(x: np.ndarray, w: np.ndarray, bias: np.ndarray,
                 stride: int, padding: int) -> np.ndarray:
    b, c, h, wid = x.shape
    f, _, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wid + 2 * padding - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((b, f, ho, wo), dtype=x.dtype)
    for bb in range(b):
        for ff in range(f):
            for y in range(ho):
                for xo in range(wo):
                    patch = xp[bb, :, y * stride:y * stride + k, xo * stride:xo * stride + k]
                    out[bb, ff, y, xo] = (patch * w[ff]).sum() + bias[ff]
    return out


def medoid_naive(features: np.ndarray, metric: str = "euclidean") -> int:
    n = len(features)
    best, best_total = 0, np.inf
    for i in range(n):
        total = 0.0
        for j in range(n):
            d = features[i].astype(float) - features[j].astype(float)
            total += np.sqrt((d * d).sum()) if metric == "euclidean" else np.abs(d).sum()
        if total < best_total - 1e-12:
            best, best_total = i, total
    return best
