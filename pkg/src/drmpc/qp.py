"""Dense primal active-set solver for small strictly convex QPs.

Solves ``min 1/2 z'Hz + g'z + c`` subject to ``A z <= b`` and ``E z = e``.
A feasible starting point comes from a phase-1 LP, which also certifies
infeasibility. Constraint selection uses the lowest index among candidates
(Bland's rule) both when dropping and when adding, so the iteration cannot
cycle and is deterministic.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from drmpc._lp import phase_one

ACTIVE_TOL = 1e-9
MULTIPLIER_TOL = 1e-10
KKT_TOL = 1e-7
FEAS_TOL = 1e-8


class QpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(eq=False)
class QpProblem:
    hessian: np.ndarray
    gradient: np.ndarray
    ineq_normals: np.ndarray
    ineq_offsets: np.ndarray
    eq_normals: np.ndarray
    eq_offsets: np.ndarray
    constant: float = 0.0

    def __post_init__(self):
        self.hessian = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        nz = self.hessian.shape[0]
        self.gradient = np.asarray(self.gradient, dtype=float).ravel()
        self.ineq_normals = np.asarray(self.ineq_normals, dtype=float).reshape(-1, nz)
        self.ineq_offsets = np.asarray(self.ineq_offsets, dtype=float).ravel()
        self.eq_normals = np.asarray(self.eq_normals, dtype=float).reshape(-1, nz)
        self.eq_offsets = np.asarray(self.eq_offsets, dtype=float).ravel()

    @property
    def num_vars(self) -> int:
        return self.hessian.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.hessian @ z + self.gradient @ z + self.constant)

    def dump(self, path) -> None:
        """Plain-text standard form for cross-checking with external solvers."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# min 1/2 z'Hz + g'z + c  s.t.  A z <= b,  E z = e\n")
            fh.write(f"n {self.num_vars}\nineq {len(self.ineq_offsets)}\neq {len(self.eq_offsets)}\n")
            fh.write(f"c {self.constant!r}\n")
            for name, arr in (("H", self.hessian), ("g", self.gradient[None, :]),
                              ("A", self.ineq_normals), ("b", self.ineq_offsets[None, :]),
                              ("E", self.eq_normals), ("e", self.eq_offsets[None, :])):
                fh.write(f"{name}\n")
                for row in np.atleast_2d(arr):
                    fh.write(" ".join(repr(float(v)) for v in row) + "\n")


@dataclass
class QpSolution:
    inputs: np.ndarray | None
    value: float
    status: QpStatus
    active_set: list = field(default_factory=list)
    multipliers: np.ndarray | None = None  # inequality multipliers (>= 0)
    eq_multipliers: np.ndarray | None = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == QpStatus.OPTIMAL


def _independent_rows(mat: np.ndarray, tol: float = 1e-10) -> list[int]:
    keep: list[int] = []
    for i in range(mat.shape[0]):
        trial = mat[keep + [i]]
        if np.linalg.matrix_rank(trial, tol=tol * max(1.0, np.abs(trial).max())) == len(keep) + 1:
            keep.append(i)
    return keep


def _solve_kkt(h, grad, aw):
    """Step ``p`` and multipliers ``mu`` of ``min 1/2 p'Hp + grad'p s.t. aw p = 0``."""
    nz = h.shape[0]
    k = aw.shape[0]
    if k == 0:
        return np.linalg.solve(h, -grad), np.zeros(0)
    kkt = np.zeros((nz + k, nz + k))
    kkt[:nz, :nz] = h
    kkt[:nz, nz:] = aw.T
    kkt[nz:, :nz] = aw
    rhs = np.concatenate([-grad, np.zeros(k)])
    sol = np.linalg.solve(kkt, rhs)
    return sol[:nz], sol[nz:]


def kkt_residuals(qp: QpProblem, sol: QpSolution) -> dict:
    """Stationarity, primal and dual feasibility, complementarity."""
    z = sol.inputs
    lam = sol.multipliers if sol.multipliers is not None else np.zeros(len(qp.ineq_offsets))
    nu = sol.eq_multipliers if sol.eq_multipliers is not None else np.zeros(len(qp.eq_offsets))
    grad = qp.hessian @ z + qp.gradient + qp.ineq_normals.T @ lam + qp.eq_normals.T @ nu
    slack = qp.ineq_offsets - qp.ineq_normals @ z
    scale = max(1.0, float(np.max(np.abs(qp.hessian @ z + qp.gradient))))
    return {
        "stationarity": float(np.max(np.abs(grad), initial=0.0)) / scale,
        "primal": float(max(np.max(-slack, initial=0.0),
                            np.max(np.abs(qp.eq_normals @ z - qp.eq_offsets), initial=0.0))),
        "dual": float(np.max(-lam, initial=0.0)),
        "complementarity": float(np.max(np.abs(lam * slack), initial=0.0)) / scale,
    }


def solve_qp(qp: QpProblem, max_iter: int | None = None) -> QpSolution:
    h, g = qp.hessian, qp.gradient
    a, b = qp.ineq_normals, qp.ineq_offsets
    e_all, f_all = qp.eq_normals, qp.eq_offsets
    nz = qp.num_vars
    n_ineq = a.shape[0]

    z0 = phase_one(a, b, e_all if len(f_all) else None, f_all if len(f_all) else None)
    if z0 is None:
        return QpSolution(None, np.inf, QpStatus.INFEASIBLE)

    eq_keep = _independent_rows(e_all) if len(f_all) else []
    e, f = e_all[eq_keep], f_all[eq_keep]

    scale_b = np.maximum(1.0, np.abs(b))
    slack = b - a @ z0
    working: list[int] = []
    for i in np.flatnonzero(np.abs(slack) <= 1e-7 * scale_b):
        rows = np.vstack([e, a[working + [int(i)]]])
        if np.linalg.matrix_rank(rows, tol=1e-10 * max(1.0, np.abs(rows).max())) == rows.shape[0]:
            working.append(int(i))
        if len(working) + len(eq_keep) >= nz:
            break
    # snap onto the working constraints so they hold with equality
    aw = np.vstack([e, a[working]])
    bw = np.concatenate([f, b[working]])
    if aw.shape[0]:
        z = z0 + aw.T @ np.linalg.solve(aw @ aw.T, bw - aw @ z0)
    else:
        z = z0.copy()

    cap = max_iter if max_iter is not None else 50 * max(1, n_ineq + len(f_all))
    n_eq = e.shape[0]
    for it in range(1, cap + 1):
        aw = np.vstack([e, a[working]]) if working else e
        grad = h @ z + g
        try:
            p, mu = _solve_kkt(h, grad, aw)
        except np.linalg.LinAlgError:
            return QpSolution(z, qp.objective(z), QpStatus.NUMERICAL_FAILURE, iterations=it)
        if np.max(np.abs(p), initial=0.0) <= 1e-12 * max(1.0, np.max(np.abs(z), initial=0.0)):
            mu_in = mu[n_eq:]
            negative = [working[k] for k in range(len(working)) if mu_in[k] < -MULTIPLIER_TOL]
            if not negative:
                return _finish(qp, z, working, mu, n_eq, eq_keep, it)
            working.remove(min(negative))
            continue
        ap = a @ p
        slack = np.maximum(b - a @ z, 0.0)
        alpha, block = 1.0, None
        for i in np.flatnonzero(ap > 1e-14 * max(1.0, np.abs(p).max())):
            if i in working:
                continue
            ratio = slack[i] / ap[i]
            if ratio < alpha - 1e-15 or (block is not None and abs(ratio - alpha) <= 1e-15 and i < block):
                alpha, block = ratio, int(i)
        z = z + alpha * p
        if block is not None:
            working.append(block)
            working.sort()
    return QpSolution(z, qp.objective(z), QpStatus.NUMERICAL_FAILURE, iterations=cap)


def _finish(qp, z, working, mu, n_eq, eq_keep, iterations) -> QpSolution:
    lam = np.zeros(len(qp.ineq_offsets))
    lam[working] = np.maximum(mu[n_eq:], 0.0)
    nu = np.zeros(len(qp.eq_offsets))
    nu[eq_keep] = mu[:n_eq]
    sol = QpSolution(z, qp.objective(z), QpStatus.OPTIMAL, sorted(working), lam, nu, iterations)
    res = kkt_residuals(qp, sol)
    if res["stationarity"] > KKT_TOL or res["primal"] > FEAS_TOL * max(1.0, np.abs(qp.ineq_offsets).max(initial=1.0)):
        sol.status = QpStatus.NUMERICAL_FAILURE
    return sol
