"""Dense two-phase simplex solver with Bland's rule.

Solves min c.x subject to A x = b, x >= 0. Problem sizes here are tiny
(tens of variables), so a dense tableau with Bland's anti-cycling pivot
rule is simple and exact enough; optimality gaps are at float precision.
"""

from __future__ import annotations

import numpy as np

from .errors import SolverFailureError

_PIVOT_TOL = 1e-10
_MAX_PIVOTS = 20_000


def _pivot(T: np.ndarray, cost: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    factors = T[:, col].copy()
    factors[row] = 0.0
    T -= np.outer(factors, T[row])
    cost -= cost[col] * T[row]
    basis[row] = col


def _iterate(T: np.ndarray, cost: np.ndarray, basis: np.ndarray, allowed: int) -> None:
    """Run simplex pivots until optimal; Bland's rule on both choices."""
    for _ in range(_MAX_PIVOTS):
        entering = -1
        for j in range(allowed):
            if cost[j] < -_PIVOT_TOL:
                entering = j
                break
        if entering < 0:
            return
        col = T[:, entering]
        rhs = T[:, -1]
        best_ratio = np.inf
        leaving = -1
        for i in range(T.shape[0]):
            if col[i] > _PIVOT_TOL:
                ratio = rhs[i] / col[i]
                if ratio < best_ratio - _PIVOT_TOL or (
                    abs(ratio - best_ratio) <= _PIVOT_TOL
                    and (leaving < 0 or basis[i] < basis[leaving])
                ):
                    best_ratio = ratio
                    leaving = i
        if leaving < 0:
            raise SolverFailureError("LP is unbounded")
        _pivot(T, cost, basis, leaving, entering)
    raise SolverFailureError("simplex iteration cap exceeded")


def solve_standard_form(
    c: np.ndarray, A: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, float]:
    """Minimize c.x s.t. A x = b, x >= 0; returns (x, objective).

    Raises SolverFailureError on infeasible or unbounded instances.
    """
    A = np.asarray(A, dtype=float).copy()
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    m, n = A.shape

    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    # Phase 1: artificial basis, minimize the artificial sum.
    T = np.hstack([A, np.eye(m), b[:, None]])
    basis = np.arange(n, n + m)
    cost = np.concatenate([-T[:, :n].sum(axis=0), np.zeros(m), [-b.sum()]])
    _iterate(T, cost, basis, allowed=n)
    if -cost[-1] > 1e-8:
        raise SolverFailureError("LP is infeasible")

    # Drive out any artificial still basic (degenerate vertex) or drop its row.
    keep = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] >= n:
            pivot_col = -1
            for j in range(n):
                if abs(T[i, j]) > _PIVOT_TOL:
                    pivot_col = j
                    break
            if pivot_col >= 0:
                _pivot(T, cost, basis, i, pivot_col)
            else:
                keep[i] = False  # redundant constraint
    T = T[keep]
    basis = basis[keep]

    # Phase 2 on the original columns.
    T = np.hstack([T[:, :n], T[:, -1:]])
    cost2 = np.concatenate([c, [0.0]])
    for i, bi in enumerate(basis):
        cost2 -= cost2[bi] * T[i]
    _iterate(T, cost2, basis, allowed=n)

    x = np.zeros(n)
    x[basis] = T[:, -1]
    return x, float(c @ x)
