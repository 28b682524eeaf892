"""Symmetric eigendecomposition by cyclic Jacobi rotations.

Sweeps visit every off-diagonal pair once, in round-robin ("tournament")
order: each round is a set of n/2 disjoint index pairs, and rotations on
disjoint pairs commute, so a whole round is applied as one vectorised update.
The result is deterministic for a given input.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

DEFAULT_TOL = 1e-10
MAX_SWEEPS = 100


@lru_cache(maxsize=32)
def round_robin_schedule(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Rounds of disjoint ``(p, q)`` pairs covering every ``p < q`` exactly once."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                pairs.append((min(a, b), max(a, b)))
        pairs.sort()
        p = np.array([a for a, _ in pairs], dtype=np.intp)
        q = np.array([b for _, b in pairs], dtype=np.intp)
        rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _max_offdiag(a: np.ndarray) -> float:
    off = np.abs(a - np.diag(np.diag(a)))
    return float(off.max()) if off.size else 0.0


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so each column's largest-magnitude entry is positive."""
    if vectors.size == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def jacobi_eigh(a, tol: float = DEFAULT_TOL, max_sweeps: int = MAX_SWEEPS) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and eigenvectors (columns) of a symmetric matrix.

    Iterates until every off-diagonal magnitude is below ``tol * ||A||_F``.
    Eigenvector signs follow :func:`fix_signs`.

    Raises:
        ValueError: ``a`` is not square or not symmetric.
        ArithmeticError: no convergence within ``max_sweeps`` sweeps.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    norm = float(np.linalg.norm(a))
    if not np.isfinite(norm):
        raise ValueError("matrix has non-finite entries")
    if np.abs(a - a.T).max(initial=0.0) > 1e-9 * max(norm, 1.0):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    threshold = tol * norm

    if n > 1 and norm > 0:
        schedule = round_robin_schedule(n)
        for _ in range(max_sweeps):
            if _max_offdiag(a) < threshold:
                break
            for p, q in schedule:
                apq = a[p, q]
                active = apq != 0.0
                if not active.any():
                    continue
                p, q, apq = p[active], q[active], apq[active]
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                big = np.abs(theta) > 1e150
                safe = np.where(big, 1.0, theta)
                t = np.where(
                    big,
                    0.5 / np.where(big, theta, 1.0),
                    np.where(safe >= 0, 1.0, -1.0) / (np.abs(safe) + np.sqrt(safe * safe + 1.0)),
                )
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                cr, sr = c[:, None], s[:, None]
                rp, rq = a[p, :], a[q, :]
                a[p, :] = cr * rp - sr * rq
                a[q, :] = sr * rp + cr * rq
                cp, cq = a[:, p], a[:, q]
                a[:, p] = cp * c - cq * s
                a[:, q] = cp * s + cq * c
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp, vq = v[:, p], v[:, q]
                v[:, p] = vp * c - vq * s
                v[:, q] = vp * s + vq * c
        else:
            if _max_offdiag(a) >= threshold:
                raise ArithmeticError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], fix_signs(v[:, order])
