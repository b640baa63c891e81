"""Lawson-Hanson active-set solver for non-negative least squares."""

from __future__ import annotations

import numpy as np

KKT_TOL = 1e-9


class RankDeficientError(np.linalg.LinAlgError):
    def __init__(self, message: str, condition: float):
        self.condition = condition
        super().__init__(message)


def nnls(A: np.ndarray, b: np.ndarray, tol: float = KKT_TOL, max_iter: int | None = None):
    """Minimise ``||A x - b||`` subject to ``x >= 0``.

    Columns are scaled to unit norm before solving; ``tol`` bounds the
    projected gradient of the scaled problem at exit, relative to ``||b||``.
    Ties between entering columns go to the lowest index. Zero columns stay
    at zero.

    Returns ``(x, rnorm, passive)`` where ``passive`` marks the free
    (strictly positive) variables.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.shape[0]:
        raise ValueError(f"incompatible shapes {A.shape} and {b.shape}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError("nnls input must be finite")
    m, n = A.shape
    norms = np.linalg.norm(A, axis=0)
    usable = norms > 0
    scale = np.where(usable, norms, 1.0)
    As = A / scale
    thresh = tol * max(1.0, float(np.linalg.norm(b)))
    max_iter = 3 * n + 30 if max_iter is None else max_iter

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        w = As.T @ (b - As @ x)
        cand = ~passive & usable & (w > thresh)
        if not cand.any():
            break
        j = int(np.argmax(np.where(cand, w, -np.inf)))
        x_prev = x
        passive[j] = True
        while True:
            z = np.zeros(n)
            idx = np.nonzero(passive)[0]
            z[idx] = np.linalg.lstsq(As[:, idx], b, rcond=None)[0]
            if np.all(z[idx] > 0):
                x = z
                break
            neg = idx[z[idx] <= 0]
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            passive &= x > 1e-15 * max(1.0, float(x.max(initial=0.0)))
            x[~passive] = 0.0
            if not passive.any():
                break
        if not passive[j] and np.array_equal(x, x_prev):
            # entering column rejected at once: KKT holds to working precision
            break
    else:
        raise RuntimeError("nnls did not converge")

    idx = np.nonzero(passive)[0]
    if idx.size:
        cond = float(np.linalg.cond(As[:, idx]))
        if not np.isfinite(cond) or cond > 1e12:
            raise RankDeficientError(
                f"active columns are numerically dependent (condition {cond:.3g})", cond
            )
    xs = x / scale
    return xs, float(np.linalg.norm(A @ xs - b)), passive
