import itertools

import numpy as np
import pytest

from drmpc.deadbeat import solve_gains
from drmpc.lpv_model import additive_w, benchmark_model, build_additive_set, make_schedule
from drmpc.polytope import PolytopeH, PolytopeV, bounding_box, contains, pontryagin_diff, vertices_of
from drmpc.tightening import TightenedSets, TighteningInfeasibleError, tighten


@pytest.fixture(scope="module")
def bench():
    m = benchmark_model()
    pol = solve_gains([m.a_bar] * 3, [m.b_bar] * 3, 3)
    d = build_additive_set(m, "robust")
    return m, pol, d


def test_zero_disturbance_keeps_sets(bench):
    m, pol, _ = bench
    zero = PolytopeV.origin(2)
    ts = tighten(pol, zero, None, m.u_set, m.x_set, 6, "robust")
    for s in ts.input_sets:
        assert np.array_equal(s.offsets, m.u_set.offsets)
    for s in ts.state_sets:
        assert np.array_equal(s.offsets, m.x_set.offsets)


def test_first_input_set_width(bench):
    m, pol, d = bench
    ts = tighten(pol, d, None, m.u_set, m.x_set, 6, "robust")
    assert np.array_equal(ts.input_sets[0].offsets, m.u_set.offsets)
    # independent scalar oracle: shrink by max_v |K0 v| on both sides
    shrink = max(abs(float((pol.gains[0] @ v)[0])) for v in d.vertices)
    assert np.allclose(ts.input_sets[1].offsets, 12.5 - shrink, atol=1e-12)
    assert 0 < shrink < 12.5


def test_saturated_state_set_membership(bench, rng):
    m, pol, d = bench
    ts = tighten(pol, d, None, m.u_set, m.x_set, 8, "robust")
    last = ts.state_set(8)
    phi0, phi1 = pol.phi
    verts = vertices_of(last).vertices
    for x in verts:
        for dv, dv1, dv2 in itertools.product(d.vertices, repeat=3):
            assert contains(m.x_set, x + dv + phi0 @ dv1 + phi1 @ dv2, tol=1e-9)
    # and the set is tight: each facet is reached by some vertex combination
    combos = np.array([dv + phi0 @ dv1 + phi1 @ dv2 for dv, dv1, dv2 in itertools.product(d.vertices, repeat=3)])
    for a, off in zip(last.normals, last.offsets):
        assert off + max(combos @ a) == pytest.approx(m.x_set.offsets[np.argmax(m.x_set.normals @ a)])


def test_saturation_and_nesting(bench):
    m, pol, d = bench
    ts = tighten(pol, d, None, m.u_set, m.x_set, 10, "robust")
    for j in range(3, 10):
        assert ts.input_sets[j] is ts.input_sets[3]
    for j in range(3, 11):
        assert ts.state_set(j) is ts.state_set(3)
    for j in range(3):
        assert np.all(ts.input_sets[j + 1].offsets <= ts.input_sets[j].offsets + 1e-15)
    for j in range(1, 3):
        assert np.all(ts.state_set(j + 1).offsets <= ts.state_set(j).offsets + 1e-15)


def test_robust_state_step_one_is_x_minus_d(bench):
    m, pol, d = bench
    ts = tighten(pol, d, None, m.u_set, m.x_set, 4, "robust")
    assert np.allclose(ts.state_set(1).offsets, pontryagin_diff(m.x_set, d.set_v).offsets)


def test_lpv_first_sets_without_additive_noise():
    m = benchmark_model(0.1)
    sched = make_schedule(m, np.zeros((7, 2)), 6)
    pol = solve_gains(sched.a_seq, sched.b_seq, 3)
    ts = tighten(pol, build_additive_set(m, "lpv"), additive_w(m), m.u_set, m.x_set, 6, "lpv")
    assert np.array_equal(ts.input_sets[1].offsets, m.u_set.offsets)
    assert np.array_equal(ts.state_set(1).offsets, m.x_set.offsets)
    # j=2 subtracts K_0 D_theta from U and D_theta from X
    dt = build_additive_set(m, "lpv")
    shrink = max(abs(float((pol.gains[0] @ v)[0])) for v in dt.vertices)
    assert np.allclose(ts.input_sets[2].offsets, 12.5 - shrink)
    assert np.allclose(ts.state_set(2).offsets, pontryagin_diff(m.x_set, dt.set_v).offsets)


def test_lpv_ordering_with_additive_noise():
    m = benchmark_model(0.1)
    w = PolytopeV(np.array([[0.1, 0.0], [-0.1, 0.0], [0.0, 0.2], [0.0, -0.2]]))
    sched = make_schedule(m, np.zeros((6, 2)), 5)
    pol = solve_gains(sched.a_seq, sched.b_seq, 3)
    dt = build_additive_set(m, "lpv").set_v
    ts = tighten(pol, dt, w, m.u_set, m.x_set, 5, "lpv")
    k, phi = pol.gains, pol.phi

    def hs(mat, p, a):
        return max(float((a @ mat @ v).item()) for v in p.vertices)

    a = np.array([1.0])
    # U - K_2 W - K_1 D - K_0 D
    expected = 12.5 - hs(k[2], w, a) - hs(k[1], dt, a) - hs(k[0], dt, a)
    assert ts.input_sets[3].offsets[0] == pytest.approx(expected, abs=1e-12)
    e1 = np.array([1.0, 0.0])
    # X - Phi_1 W - Phi_0 D - D
    expected = 60 - hs(phi[1], w, e1) - hs(phi[0], dt, e1) - hs(np.eye(2), dt, e1)
    assert ts.state_set(3).offsets[0] == pytest.approx(expected, abs=1e-12)
    assert ts.state_set(1).offsets[0] == pytest.approx(60 - 0.1)


def test_empty_set_raises(bench):
    m, pol, d = bench
    big = PolytopeV(d.vertices * 50)
    with pytest.raises(TighteningInfeasibleError) as err:
        tighten(pol, big, None, m.u_set, m.x_set, 5, "robust")
    assert err.value.kind == "input" and err.value.index >= 1


def test_horizon_shorter_than_m(bench):
    m, pol, d = bench
    with pytest.raises(ValueError):
        tighten(pol, d, None, m.u_set, m.x_set, 2, "robust")


def test_json_roundtrip(bench):
    m, pol, d = bench
    ts = tighten(pol, d, None, m.u_set, m.x_set, 5, "robust")
    again = TightenedSets.from_json(ts.to_json({"policy": pol.digest()}))
    for a, b in zip(again.state_sets, ts.state_sets):
        assert np.array_equal(a.offsets, b.offsets)
    lo, hi = bounding_box(again.input_sets[4])
    assert hi[0] - lo[0] < 25.0


def test_box_closed_form():
    # scalar integrator x+ = x + u with |d| <= 0.1: K_0 = -1 and the sets shrink by 0.1 per step
    a, b = np.array([[1.0]]), np.array([[1.0]])
    pol = solve_gains([a], [b], 1)
    d = PolytopeV(np.array([[-0.1], [0.1]]))
    ts = tighten(pol, d, None, PolytopeH.box([-1], [1]), PolytopeH.box([-2], [2]), 3, "robust")
    assert np.allclose(ts.input_sets[1].offsets, 0.9)
    assert np.allclose(ts.state_set(1).offsets, 1.9)
    assert np.allclose(ts.state_set(3).offsets, 1.9)
