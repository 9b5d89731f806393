"""Thin wrapper around scipy's HiGHS linear programming interface."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded" | "failed"
    x: np.ndarray | None
    value: float


def solve_lp(c, a_ub=None, b_ub=None, a_eq=None, b_eq=None, bounds=None) -> LpResult:
    """Minimize ``c @ x`` subject to ``a_ub x <= b_ub`` and ``a_eq x = b_eq``.

    Variables are free unless ``bounds`` says otherwise.
    """
    c = np.asarray(c, dtype=float)
    if bounds is None:
        bounds = [(None, None)] * c.size
    if a_ub is not None and len(a_ub) == 0:
        a_ub = b_ub = None
    if a_eq is not None and len(a_eq) == 0:
        a_eq = b_eq = None
    res = linprog(
        c,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs",
        options=_HIGHS_OPTIONS,
    )
    if res.status == 0:
        return LpResult("optimal", np.asarray(res.x), float(res.fun))
    if res.status == 2:
        return LpResult("infeasible", None, np.inf)
    if res.status == 3:
        return LpResult("unbounded", None, -np.inf)
    return LpResult("failed", None, np.nan)


def phase_one(a_ub, b_ub, a_eq=None, b_eq=None, tol: float = 1e-9) -> np.ndarray | None:
    """Return a point satisfying the constraints within ``tol``, or None.

    Solves ``min s`` over ``a_ub x - s <= b_ub``, ``a_eq x = b_eq``, ``s >= -1``;
    the system is declared infeasible when the optimal ``s`` exceeds ``tol``.
    """
    a_ub = np.atleast_2d(np.asarray(a_ub, dtype=float))
    b_ub = np.asarray(b_ub, dtype=float).ravel()
    n = a_ub.shape[1]
    rows = a_ub.shape[0]
    if rows == 0 and a_eq is None:
        return np.zeros(n)
    a1 = np.hstack([a_ub, -np.ones((rows, 1))])
    c = np.zeros(n + 1)
    c[-1] = 1.0
    a_eq1 = b_eq1 = None
    if a_eq is not None and len(a_eq):
        a_eq = np.atleast_2d(np.asarray(a_eq, dtype=float))
        a_eq1 = np.hstack([a_eq, np.zeros((a_eq.shape[0], 1))])
        b_eq1 = np.asarray(b_eq, dtype=float).ravel()
    bounds = [(None, None)] * n + [(-1.0, None)]
    res = solve_lp(c, a1, b_ub, a_eq1, b_eq1, bounds)
    if res.status != "optimal" or res.value > tol:
        return None
    return res.x[:n]
