"""Condensed finite-time optimal control problem and the receding-horizon law.

States are eliminated by forward substitution, so the decision vector is
``(u_{0|0}, ..., u_{N-1|0})``. All matrices of the QP are independent of the
initial state; only offsets and the linear cost term are affine in ``x0``.
That parametric form is built once per :class:`FtocpSpec` and reused.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from drmpc._lp import phase_one
from drmpc.lpv_model import NominalSchedule
from drmpc.polytope import PolytopeH, contains
from drmpc.qp import QpProblem, QpSolution, QpStatus, solve_qp
from drmpc.tightening import TightenedSets

DEDUP_TOL = 1e-12


class CostError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StageCost:
    """``l(u, x) = x'Qx + u'Ru`` with both weights symmetric positive definite."""

    q: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        for name in ("q", "r"):
            mat = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if mat.shape[0] != mat.shape[1] or not np.allclose(mat, mat.T, atol=1e-12):
                raise CostError(f"{name} must be square and symmetric")
            if np.linalg.eigvalsh(mat).min() <= 0.0:
                raise CostError(f"{name} must be positive definite")
            mat.setflags(write=False)
            object.__setattr__(self, name, mat)

    def __call__(self, x, u) -> float:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return float(x @ self.q @ x + u @ self.r @ u)

    @classmethod
    def identity(cls, n: int, m: int) -> "StageCost":
        return cls(np.eye(n), np.eye(m))


@dataclass(eq=False)
class FtocpSpec:
    """One instance of the deadbeat MPC problem.

    ``terminal`` is ``"origin"`` (``x_N = 0``) or a :class:`PolytopeH` that must
    contain the origin. ``initial_set``, if given, constrains ``x_{0|0}``.
    """

    schedule: NominalSchedule
    tightened: TightenedSets
    cost: StageCost
    horizon_n: int
    terminal: object = "origin"
    initial_set: PolytopeH | None = None

    def __post_init__(self):
        if self.horizon_n < 1:
            raise ValueError("horizon must be positive")
        if len(self.schedule.a_seq) < self.horizon_n:
            raise ValueError("nominal schedule is shorter than the horizon")
        if self.tightened.horizon != self.horizon_n:
            raise ValueError(
                f"tightened sets cover {self.tightened.horizon} steps, horizon is {self.horizon_n}"
            )
        if isinstance(self.terminal, PolytopeH):
            if not contains(self.terminal, np.zeros(self.terminal.dim)):
                raise ValueError("terminal set must contain the origin")
        elif self.terminal != "origin":
            raise ValueError(f"unknown terminal condition {self.terminal!r}")

    @property
    def n(self) -> int:
        return self.schedule.a_seq[0].shape[0]

    @property
    def m(self) -> int:
        return self.schedule.b_seq[0].shape[1]

    @cached_property
    def parametric(self) -> "ParametricQp":
        return _build_parametric(self)


@dataclass(eq=False)
class ParametricQp:
    """QP data as affine functions of ``x0``:

    ``A U <= w + S x0``, ``E U = T x0``, gradient ``F x0``,
    constant ``x0' Y x0``; ``psi[j]``/``gamma[j]`` predict ``x_j``.
    """

    hessian: np.ndarray
    grad_map: np.ndarray
    const_map: np.ndarray
    ineq_normals: np.ndarray
    ineq_const: np.ndarray
    ineq_state: np.ndarray
    eq_normals: np.ndarray
    eq_state: np.ndarray
    psi: list = field(repr=False)
    gamma: list = field(repr=False)
    row_tags: list = field(repr=False)  # ("u"|"x"|"xf"|"x0", step) per inequality row

    def instantiate(self, x0) -> QpProblem:
        x0 = np.asarray(x0, dtype=float).ravel()
        return QpProblem(
            self.hessian,
            self.grad_map @ x0,
            self.ineq_normals,
            self.ineq_const + self.ineq_state @ x0,
            self.eq_normals,
            self.eq_state @ x0,
            float(x0 @ self.const_map @ x0),
        )

    def predict(self, x0, inputs) -> np.ndarray:
        """Nominal states ``x_0 .. x_N`` for a stacked input vector."""
        x0 = np.asarray(x0, dtype=float).ravel()
        return np.array([p @ x0 + g @ inputs for p, g in zip(self.psi, self.gamma)])


def _build_parametric(spec: FtocpSpec) -> ParametricQp:
    n, m, big_n = spec.n, spec.m, spec.horizon_n
    a_seq, b_seq = spec.schedule.a_seq, spec.schedule.b_seq
    psi = [np.eye(n)]
    gamma = [np.zeros((n, big_n * m))]
    for j in range(big_n):
        psi.append(a_seq[j] @ psi[-1])
        nxt = a_seq[j] @ gamma[-1]
        nxt[:, j * m : (j + 1) * m] += b_seq[j]
        gamma.append(nxt)

    q, r = spec.cost.q, spec.cost.r
    hess = np.kron(np.eye(big_n), r)
    grad_map = np.zeros((big_n * m, n))
    const_map = np.zeros((n, n))
    for j in range(big_n):
        hess += gamma[j].T @ q @ gamma[j]
        grad_map += gamma[j].T @ q @ psi[j]
        const_map += psi[j].T @ q @ psi[j]
    hess = 2.0 * hess
    hess = 0.5 * (hess + hess.T)
    grad_map = 2.0 * grad_map

    rows_a, rows_w, rows_s, tags = [], [], [], []

    def add(poly: PolytopeH, coeff_u: np.ndarray, coeff_x: np.ndarray, tag):
        rows_a.append(poly.normals @ coeff_u)
        rows_w.append(poly.offsets)
        rows_s.append(-poly.normals @ coeff_x)
        tags.extend([tag] * poly.normals.shape[0])

    if spec.initial_set is not None:
        add(spec.initial_set, np.zeros((n, big_n * m)), np.eye(n), ("x0", 0))
    for j in range(big_n):
        sel = np.zeros((m, big_n * m))
        sel[:, j * m : (j + 1) * m] = np.eye(m)
        add(spec.tightened.input_sets[j], sel, np.zeros((m, n)), ("u", j))
    last_state = big_n if isinstance(spec.terminal, PolytopeH) else big_n - 1
    for j in range(1, last_state + 1):
        add(spec.tightened.state_set(j), gamma[j], psi[j], ("x", j))
    if isinstance(spec.terminal, PolytopeH):
        add(spec.terminal, gamma[big_n], psi[big_n], ("xf", big_n))
        eq_normals = np.zeros((0, big_n * m))
        eq_state = np.zeros((0, n))
    else:
        eq_normals = gamma[big_n]
        eq_state = -psi[big_n]

    a_mat = np.vstack(rows_a)
    w_vec = np.concatenate(rows_w)
    s_mat = np.vstack(rows_s)
    a_mat, w_vec, s_mat, tags = _dedup_rows(a_mat, w_vec, s_mat, tags)
    return ParametricQp(hess, grad_map, const_map, a_mat, w_vec, s_mat, eq_normals, eq_state, psi, gamma, tags)


def _dedup_rows(a_mat, w_vec, s_mat, tags):
    # rows identical in normal and in both offset parts are redundant
    keep: list[int] = []
    for i in range(a_mat.shape[0]):
        row = np.concatenate([a_mat[i], [w_vec[i]], s_mat[i]])
        if not any(
            np.max(np.abs(row - np.concatenate([a_mat[k], [w_vec[k]], s_mat[k]]))) <= DEDUP_TOL
            for k in keep
        ):
            keep.append(i)
    return a_mat[keep], w_vec[keep], s_mat[keep], [tags[i] for i in keep]


def assemble(spec: FtocpSpec, x0) -> QpProblem:
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != spec.n:
        raise ValueError(f"initial state has length {x0.size}, expected {spec.n}")
    return spec.parametric.instantiate(x0)


def problem_dimensions(spec: FtocpSpec) -> dict:
    """Row counts of the condensed problem with the counting convention spelled out."""
    par = spec.parametric
    n, big_n = spec.n, spec.horizon_n
    initial_rows = sum(1 for tag in par.row_tags if tag[0] == "x0")
    return {
        "decision_variables": par.hessian.shape[0],
        "inequality_rows": par.ineq_normals.shape[0],
        "initial_state_rows": initial_rows,
        "inequality_rows_without_initial": par.ineq_normals.shape[0] - initial_rows,
        "equality_rows": par.eq_normals.shape[0],
        # same problem with states kept as variables: dynamics, initial and terminal rows
        "sparse_equality_rows": n * big_n + n + (n if spec.terminal == "origin" else 0),
        "convention": (
            "condensed: decision vector is the N inputs; inequalities are the tightened "
            "input sets for j=0..N-1 and tightened state sets for j=1..N-1 (plus j=N and "
            "the terminal set when a terminal polytope is used), plus the rows of the "
            "initial-state set when one is configured; duplicate rows removed; "
            "equalities are the n rows of x_N = 0"
        ),
    }


@dataclass
class StepResult:
    u: np.ndarray | None
    value: float
    status: QpStatus
    solution: QpSolution


def solve(spec: FtocpSpec, x0) -> QpSolution:
    return solve_qp(assemble(spec, x0))


def control_step(spec: FtocpSpec, x0) -> StepResult:
    """First optimal input and the optimal value ``V*_N(x0)``."""
    sol = solve(spec, x0)
    if sol.status != QpStatus.OPTIMAL:
        return StepResult(None, np.inf, sol.status, sol)
    return StepResult(sol.inputs[: spec.m].copy(), sol.value, sol.status, sol)


def is_feasible(spec: FtocpSpec, x0) -> bool:
    qp = assemble(spec, x0)
    eq = (qp.eq_normals, qp.eq_offsets) if len(qp.eq_offsets) else (None, None)
    return phase_one(qp.ineq_normals, qp.ineq_offsets, *eq) is not None
