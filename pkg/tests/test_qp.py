import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drmpc.qp import QpProblem, QpStatus, kkt_residuals, solve_qp


def brute_force(qp: QpProblem):
    """Enumerate active sets, solve each KKT system, keep the best KKT point.

    Returns (status, value). Independent of the solver under test.
    """
    h, g = qp.hessian, qp.gradient
    a, b = qp.ineq_normals, qp.ineq_offsets
    e, f = qp.eq_normals, qp.eq_offsets
    nz = h.shape[0]
    best = None
    for size in range(0, min(nz, a.shape[0]) + 1):
        for act in itertools.combinations(range(a.shape[0]), size):
            rows = np.vstack([e, a[list(act)]])
            rhs = np.concatenate([f, b[list(act)]])
            k = rows.shape[0]
            kkt = np.block([[h, rows.T], [rows, np.zeros((k, k))]])
            try:
                sol = np.linalg.lstsq(kkt, np.concatenate([-g, rhs]), rcond=None)[0]
            except np.linalg.LinAlgError:
                continue
            z = sol[:nz]
            if np.max(np.abs(kkt @ sol - np.concatenate([-g, rhs]))) > 1e-8:
                continue
            if a.shape[0] and np.max(a @ z - b) > 1e-8:
                continue
            lam = sol[nz + e.shape[0]:]
            if lam.size and lam.min() < -1e-8:
                continue
            val = qp.objective(z)
            if best is None or val < best:
                best = val
    if best is None:
        return QpStatus.INFEASIBLE, np.inf
    return QpStatus.OPTIMAL, best


def random_qp(r: np.random.Generator, nz=None, n_in=None, n_eq=None):
    nz = nz or int(r.integers(1, 9))
    n_in = int(r.integers(0, 13)) if n_in is None else n_in
    n_eq = int(r.integers(0, min(3, nz) + 1)) if n_eq is None else n_eq
    l = r.normal(size=(nz, nz))
    h = l @ l.T + 0.1 * np.eye(nz)
    g = r.normal(size=nz) * 3
    a = r.normal(size=(n_in, nz))
    # mix feasible and infeasible instances
    center = r.normal(size=nz)
    b = a @ center + r.uniform(-0.5, 2.0, size=n_in)
    e = r.normal(size=(n_eq, nz))
    f = e @ center
    return QpProblem(h, g, a, b, e, f)


def test_equality_only():
    qp = QpProblem(2 * np.eye(3), np.zeros(3), np.zeros((0, 3)), np.zeros(0), np.array([[1.0, 0, 0]]), np.array([1.0]))
    sol = solve_qp(qp)
    assert sol.status == QpStatus.OPTIMAL
    assert np.allclose(sol.inputs, [1, 0, 0]) and sol.value == pytest.approx(1.0)


def test_active_bound():
    # (z - 3)^2 = z^2 - 6z + 9 with z <= 1
    qp = QpProblem([[2.0]], [-6.0], [[1.0]], [1.0], np.zeros((0, 1)), np.zeros(0), 9.0)
    sol = solve_qp(qp)
    assert sol.inputs[0] == pytest.approx(1.0) and sol.value == pytest.approx(4.0)
    assert sol.active_set == [0] and sol.multipliers[0] == pytest.approx(4.0)


def test_infeasible():
    qp = QpProblem([[2.0]], [0.0], [[1.0], [-1.0]], [-1.0, -1.0], np.zeros((0, 1)), np.zeros(0))
    assert solve_qp(qp).status == QpStatus.INFEASIBLE


def test_degenerate_redundant_constraints():
    # the same constraint three times plus a parallel copy active at the optimum
    a = np.array([[1.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    b = np.array([1.0, 1.0, 2.0, 5.0])
    qp = QpProblem(np.eye(2), [-3.0, 0.0], a, b, np.zeros((0, 2)), np.zeros(0))
    sol = solve_qp(qp)
    assert sol.status == QpStatus.OPTIMAL and np.allclose(sol.inputs, [1.0, 0.0])


def test_kkt_residuals_small():
    r = np.random.default_rng(0)
    for _ in range(20):
        qp = random_qp(r)
        sol = solve_qp(qp)
        if sol.status == QpStatus.OPTIMAL:
            res = kkt_residuals(qp, sol)
            assert max(res.values()) < 1e-7


def test_dump(tmp_path):
    qp = QpProblem([[2.0]], [-6.0], [[1.0]], [1.0], np.zeros((0, 1)), np.zeros(0), 9.0)
    path = tmp_path / "qp.txt"
    qp.dump(path)
    text = path.read_text()
    assert "ineq 1" in text and text.splitlines()[0].startswith("#")


def test_deterministic():
    r = np.random.default_rng(5)
    qp = random_qp(r, 6, 10, 2)
    s1, s2 = solve_qp(qp), solve_qp(qp)
    assert s1.status == s2.status
    if s1.status == QpStatus.OPTIMAL:
        assert np.array_equal(s1.inputs, s2.inputs) and s1.active_set == s2.active_set


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_oracle(seed):
    qp = random_qp(np.random.default_rng(seed))
    status, value = brute_force(qp)
    sol = solve_qp(qp)
    assert sol.status == status
    if status == QpStatus.OPTIMAL:
        assert sol.value == pytest.approx(value, abs=1e-6, rel=1e-9)
