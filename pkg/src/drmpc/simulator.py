"""Closed-loop simulation of the robust and LPV deadbeat MPC regimes.

The true plant is ``x+ = A(theta_k) x + B(theta_k) u + w_k``. Every random
draw comes from one seeded generator, so a (model, config, seed) triple
always reproduces the same trace.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from drmpc.deadbeat import DeadbeatPolicy
from drmpc.design import ControllerConfig, Problem, lpv_problem, nominal_policy, robust_problem
from drmpc.ftocp import StageCost, control_step, is_feasible
from drmpc.lpv_model import (
    LpvModel,
    ModelError,
    NominalSchedule,
    build_additive_set,
    eval_matrices,
)
from drmpc.polytope import (
    PolytopeH,
    PolytopeV,
    as_vertices,
    bounding_box,
    contains,
    halfspaces_of,
    is_empty,
    pontryagin_diff,
)
from drmpc.qp import QpProblem, QpStatus, solve_qp
from drmpc.tightening import TightenedSets

DISTURBANCE_MODES = ("zero", "vertices", "uniform")
PARAMETER_KINDS = ("constant", "random_walk", "replay")
MONITORS = frozenset({"shift_candidate", "value_decrease"})
TERMINAL_TOL = 1e-8
MEMBER_TOL = 1e-8


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class ParameterMode:
    """How the parameter evolves.

    In lpv mode this generates the nominal path ``theta_bar``; in robust
    mode it gives ``theta_k`` directly.
    """

    kind: str = "constant"
    value: tuple | None = None  # constant
    delta_max: float = 0.0  # random_walk
    path: tuple | None = None  # replay

    def __post_init__(self):
        if self.kind not in PARAMETER_KINDS:
            raise ValueError(f"parameter mode must be one of {PARAMETER_KINDS}")
        if self.delta_max < 0:
            raise ValueError("delta_max must be nonnegative")
        if self.kind == "replay" and self.path is None:
            raise ValueError("replay mode needs a path")


@dataclass(frozen=True)
class SimConfig:
    """``parameter_mode=None`` draws ``theta_k`` from Theta by
    ``disturbance_mode`` (robust) or holds the nominal path at 0 (lpv)."""

    steps: int
    seed: int = 0
    disturbance_mode: str = "vertices"
    parameter_mode: ParameterMode | None = None
    monitors: frozenset = MONITORS

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if self.disturbance_mode not in DISTURBANCE_MODES:
            raise ValueError(f"disturbance_mode must be one of {DISTURBANCE_MODES}")
        unknown = set(self.monitors) - MONITORS
        if unknown:
            raise ValueError(f"unknown monitors {sorted(unknown)}")


@dataclass(frozen=True)
class ShiftVerdict:
    ok: bool
    input_violation: float
    state_violation: float
    terminal_residual: float
    first_failure: str | None = None

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "input_violation": self.input_violation,
            "state_violation": self.state_violation,
            "terminal_residual": self.terminal_residual,
            "first_failure": self.first_failure,
        }


@dataclass
class SimTrace:
    mode: str
    states: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    nominal_thetas: list = field(default_factory=list)
    disturbances: list = field(default_factory=list)  # x_{k+1} minus its one-step prediction
    additive: list = field(default_factory=list)  # w_k
    values: list = field(default_factory=list)
    statuses: list = field(default_factory=list)
    monitor_reports: list = field(default_factory=list)
    stage_costs: list = field(default_factory=list)
    feasibility_violation: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def length(self) -> int:
        return len(self.inputs)

    def shift_failures(self) -> list[int]:
        return [
            k for k, rep in enumerate(self.monitor_reports)
            if rep.get("shift_candidate") is not None and not rep["shift_candidate"]["ok"]
        ]

    def to_json(self) -> dict:
        as_list = lambda seq: [np.asarray(v).tolist() for v in seq]  # noqa: E731
        return {
            "mode": self.mode,
            "states": as_list(self.states),
            "inputs": as_list(self.inputs),
            "thetas": as_list(self.thetas),
            "nominal_thetas": as_list(self.nominal_thetas),
            "disturbances": as_list(self.disturbances),
            "additive": as_list(self.additive),
            "values": [float(v) for v in self.values],
            "statuses": [str(getattr(s, "value", s)) for s in self.statuses],
            "stage_costs": [float(v) for v in self.stage_costs],
            "monitor_reports": self.monitor_reports,
            "feasibility_violation": self.feasibility_violation,
            "meta": self.meta,
        }

    def write_csv(self, path, header: str | None = None) -> None:
        n = len(self.states[0]) if self.states else 0
        m = len(self.inputs[0]) if self.inputs else 0
        p = len(self.thetas[0]) if self.thetas else 0
        cols = (["k"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
                + [f"theta{i + 1}" for i in range(p)] + [f"w{i + 1}" for i in range(n)]
                + [f"d{i + 1}" for i in range(n)] + ["value", "status", "shift_ok"])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header:
                fh.write(f"# {header}\n")
            writer = csv.writer(fh)
            writer.writerow(cols)
            for k in range(self.length):
                shift = self.monitor_reports[k].get("shift_candidate") if k < len(self.monitor_reports) else None
                writer.writerow(
                    [k, *map(repr, map(float, self.states[k])), *map(repr, map(float, self.inputs[k])),
                     *map(repr, map(float, self.thetas[k])), *map(repr, map(float, self.additive[k])),
                     *map(repr, map(float, self.disturbances[k])), repr(float(self.values[k])),
                     str(getattr(self.statuses[k], "value", self.statuses[k])),
                     "" if shift is None else int(shift["ok"])]
                )


class _SetSampler:
    """Draws vertices of, or uniform points in, a polytope."""

    def __init__(self, poly: PolytopeH | PolytopeV):
        self.vertices = as_vertices(poly).vertices
        self.hrep: PolytopeH | None = poly if isinstance(poly, PolytopeH) else None
        if self.hrep is None and self.vertices.shape[0] > 1 and poly.dim <= 2:
            try:
                self.hrep = halfspaces_of(poly)
            except ValueError:
                self.hrep = None  # flat set: fall back to random convex weights
        self.box = bounding_box(self.hrep) if self.hrep is not None else None

    def draw(self, rng: np.random.Generator, mode: str) -> np.ndarray:
        dim = self.vertices.shape[1]
        if mode == "zero":
            return np.zeros(dim)
        if mode == "vertices" or self.vertices.shape[0] == 1:
            return self.vertices[rng.integers(self.vertices.shape[0])].copy()
        if self.hrep is None:
            weights = rng.dirichlet(np.ones(self.vertices.shape[0]))
            return weights @ self.vertices
        lo, hi = self.box
        while True:
            cand = rng.uniform(lo, hi)
            if contains(self.hrep, cand, tol=0.0):
                return cand


def _project(poly: PolytopeH, point: np.ndarray) -> np.ndarray:
    """Euclidean projection onto a polytope (a small QP)."""
    if contains(poly, point, tol=0.0):
        return point
    dim = poly.dim
    qp = QpProblem(np.eye(dim), -point, poly.normals, poly.offsets, np.zeros((0, dim)), np.zeros(0))
    sol = solve_qp(qp)
    if sol.status != QpStatus.OPTIMAL:
        raise SimulationError("projection onto the admissible parameter set failed")
    return sol.inputs


def _is_box(poly: PolytopeH) -> tuple[np.ndarray, np.ndarray] | None:
    normals = poly.normals
    if np.count_nonzero(normals, axis=1).max() != 1:
        return None
    lo = np.full(poly.dim, -np.inf)
    hi = np.full(poly.dim, np.inf)
    for row, off in zip(normals, poly.offsets):
        i = int(np.flatnonzero(row)[0])
        if row[i] > 0:
            hi[i] = min(hi[i], off / row[i])
        else:
            lo[i] = max(lo[i], off / row[i])
    return lo, hi


def sample_parameter_path(
    theta_set: PolytopeH,
    delta_max: float,
    length: int,
    seed,
    theta_delta_set: PolytopeH | None = None,
) -> np.ndarray:
    """Random walk with steps uniform in ``[-delta_max, delta_max]^p``.

    The walk starts uniformly inside the admissible set (Theta shrunk by
    Theta_Delta, which defaults to the box of half-width ``delta_max``) and
    every step is clipped back into it: coordinate clipping for boxes,
    Euclidean projection otherwise.
    """
    if delta_max < 0:
        raise ValueError("delta_max must be nonnegative")
    if length < 1:
        raise ValueError("length must be positive")
    p = theta_set.dim
    shrink = theta_delta_set or PolytopeH.box([-delta_max] * p, [delta_max] * p)
    admissible = pontryagin_diff(theta_set, as_vertices(shrink))
    if is_empty(admissible):
        raise ModelError("Theta_Delta is too large: no admissible nominal parameter")
    rng = np.random.default_rng(seed)
    box = _is_box(admissible)
    sampler = _SetSampler(admissible)

    def clip(t):
        return np.clip(t, *box) if box is not None else _project(admissible, t)

    path = [sampler.draw(rng, "uniform")]
    for _ in range(length - 1):
        path.append(clip(path[-1] + rng.uniform(-delta_max, delta_max, p)))
    return np.array(path)


@dataclass
class StepData:
    """What the shift candidate needs about one closed-loop step."""

    inputs: np.ndarray  # optimal stacked inputs at step k
    x_next: np.ndarray  # realized x_{k+1}
    disturbance: np.ndarray  # d_0 (robust) or w_0 (lpv)
    old_schedule: NominalSchedule
    new_schedule: NominalSchedule
    mode: str
    horizon_n: int


def shift_candidate_inputs(step: StepData, policy: DeadbeatPolicy, variant: str = "verbatim") -> np.ndarray:
    """Candidate inputs ``u_{1|1} .. u_{N|1}`` built from the step-k optimum.

    ``variant="verbatim"`` follows the recursive-feasibility argument
    literally; in lpv mode it corrects ``d_1`` with ``K_0 .. K_{M-2}`` only.
    ``"complete"`` applies the full ``K_0 .. K_{M-1}`` to ``d_1``.
    """
    big_n, m_h = step.horizon_n, policy.horizon_m
    m = step.old_schedule.b_seq[0].shape[1]
    u_opt = np.asarray(step.inputs, dtype=float).reshape(big_n, m)
    cand = np.zeros((big_n, m))
    cand[: big_n - 1] = u_opt[1:]
    k = policy.gains
    for i in range(min(m_h, big_n)):
        cand[i] += k[i] @ step.disturbance
    if step.mode == "lpv":
        # d_1: gap between the realized model at k+1 and the old prediction
        a_real, b_real = step.new_schedule.a_seq[0], step.new_schedule.b_seq[0]
        a_old, b_old = step.old_schedule.a_seq[1], step.old_schedule.b_seq[1]
        d1 = (a_real - a_old) @ step.x_next + (b_real - b_old) @ cand[0]
        last = m_h - 1 if variant == "verbatim" else m_h
        for i in range(1, min(last, big_n - 1) + 1):
            cand[i] += k[i - 1] @ d1
    return cand


def _violation(poly: PolytopeH, x) -> float:
    scale = np.maximum(1.0, np.abs(poly.offsets))
    return float(np.max((poly.normals @ x - poly.offsets) / scale))


def shift_candidate_check(
    step: StepData,
    policy: DeadbeatPolicy,
    tightened: TightenedSets,
    initial_set: PolytopeH | None = None,
    terminal="origin",
    variant: str = "verbatim",
) -> ShiftVerdict:
    """Build the shifted candidate and test it against the step-(k+1) problem.

    Candidate states follow the step-(k+1) prediction model from the
    realized ``x_{k+1}``; ``tightened`` are that problem's sets.
    """
    cand = shift_candidate_inputs(step, policy, variant)
    big_n = step.horizon_n
    sched = step.new_schedule
    u_viol = max(_violation(tightened.input_sets[j], cand[j]) for j in range(big_n))
    x = np.asarray(step.x_next, dtype=float)
    x_viol = _violation(initial_set, x) if initial_set is not None else -np.inf
    states = []
    for j in range(big_n):
        x = sched.a_seq[j] @ x + sched.b_seq[j] @ cand[j]
        states.append(x)
    last = big_n if isinstance(terminal, PolytopeH) else big_n - 1
    for j in range(1, last + 1):
        x_viol = max(x_viol, _violation(tightened.state_set(j), states[j - 1]))
    if isinstance(terminal, PolytopeH):
        term = max(0.0, _violation(terminal, states[-1]))
    else:
        term = float(np.linalg.norm(states[-1]))
    failure = None
    if u_viol > MEMBER_TOL:
        failure = "input"
    elif x_viol > MEMBER_TOL:
        failure = "state"
    elif term > TERMINAL_TOL:
        failure = "terminal"
    return ShiftVerdict(failure is None, float(u_viol), float(x_viol), term, failure)


@dataclass
class ValueReport:
    decrease_ok: bool
    checked_free_steps: int
    worst_free_margin: float  # max of V+ - V + l over disturbance-free steps
    max_ratio: float  # max excess / ||d|| over disturbed steps
    sigma_cal: float | None
    bounded_ok: bool | None
    excesses: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "decrease_ok": self.decrease_ok,
            "checked_free_steps": self.checked_free_steps,
            "worst_free_margin": self.worst_free_margin,
            "max_ratio": self.max_ratio,
            "sigma_cal": self.sigma_cal,
            "bounded_ok": self.bounded_ok,
        }


def value_decrease_check(
    trace: SimTrace,
    sigma_cal: float | None = None,
    tol: float = 1e-6,
    zero_tol: float = 1e-12,
    settle: float = 1e-6,
) -> ValueReport:
    """Lyapunov-decrease bookkeeping along a trace.

    Disturbance-free steps must satisfy ``V+ <= V - l(x, u) + tol`` until
    ``||x|| <= settle``. For disturbed steps the excess ``V+ - V + l`` is
    divided by ``||d||``; the largest ratio is the calibrated sigma.
    """
    worst, checked, ratio = -np.inf, 0, 0.0
    ok = True
    bounded = None if sigma_cal is None else True
    excesses = []
    steps = min(trace.length, len(trace.values) - 1)
    for k in range(steps):
        if trace.statuses[k + 1] != QpStatus.OPTIMAL:
            break
        excess = trace.values[k + 1] - trace.values[k] + trace.stage_costs[k]
        dnorm = float(np.linalg.norm(trace.disturbances[k]))
        excesses.append(float(excess))
        if dnorm <= zero_tol:
            if np.linalg.norm(trace.states[k]) <= settle:
                continue
            checked += 1
            worst = max(worst, excess)
            if excess > tol:
                ok = False
        else:
            ratio = max(ratio, excess / dnorm)
            if sigma_cal is not None and excess > sigma_cal * dnorm + tol:
                bounded = False
    return ValueReport(ok, checked, float(worst), float(ratio), sigma_cal, bounded, excesses)


class _Controller:
    """Produces the problem to solve at each step."""

    def __init__(self, model, mode, cfg, cost, horizon_n, nominal_path):
        self.model, self.mode, self.cfg, self.cost, self.n = model, mode, cfg, cost, horizon_n
        self.nominal_path = nominal_path
        if mode == "robust":
            self.fixed = robust_problem(model, cost, horizon_n, cfg)
        else:
            self.d_set = build_additive_set(model, "lpv")
            self.frozen = nominal_policy(model, cfg) if cfg.gain_mode == "frozen" else None

    def problem(self, k: int, theta_k: np.ndarray) -> Problem:
        if self.mode == "robust":
            return self.fixed
        path = np.vstack([theta_k, self.nominal_path[k + 1 : k + self.n + 1]])
        return lpv_problem(self.model, path, self.cost, self.n, self.cfg, self.d_set, self.frozen)


def _nominal_path(model: LpvModel, pm: ParameterMode | None, length: int, rng) -> np.ndarray:
    p = model.p
    if pm is None:
        return np.zeros((length, p))
    if pm.kind == "constant":
        value = np.zeros(p) if pm.value is None else np.asarray(pm.value, dtype=float)
        return np.tile(value, (length, 1))
    if pm.kind == "replay":
        path = np.atleast_2d(np.asarray(pm.path, dtype=float))
        if path.shape[0] < length:
            raise SimulationError(f"replay path has {path.shape[0]} points, need {length}")
        return path[:length]
    seed = int(rng.integers(2**63))
    return sample_parameter_path(model.theta_set, pm.delta_max, length, seed, model.theta_delta_set)


def run_closed_loop(
    model: LpvModel,
    mode: str,
    policy_cfg: ControllerConfig,
    cost: StageCost,
    horizon_n: int,
    config: SimConfig,
    x0,
    corrupt_gains=None,
) -> SimTrace:
    """Receding-horizon loop on the true parameter-varying plant.

    ``corrupt_gains`` (a callable on a policy) only alters the policy used by
    the shift-candidate monitor, for negative-control runs.
    """
    if mode not in ("robust", "lpv"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(config.seed)
    x = np.asarray(x0, dtype=float).ravel()
    steps = config.steps
    length = steps + horizon_n + 1
    if mode == "robust":
        walk = _nominal_path(model, config.parameter_mode, length, rng) if config.parameter_mode else None
        theta_sampler = _SetSampler(model.theta_set)
    else:
        nominal = _nominal_path(model, config.parameter_mode, length, rng)
        delta_sampler = _SetSampler(model.theta_delta_set)
    w_sampler = _SetSampler(model.w_set)
    ctrl = _Controller(model, mode, policy_cfg, cost, horizon_n, nominal if mode == "lpv" else None)

    def draw_theta(k):
        if mode == "robust":
            if walk is not None:
                return walk[k]
            return theta_sampler.draw(rng, config.disturbance_mode)
        return nominal[k] + delta_sampler.draw(rng, config.disturbance_mode)

    trace = SimTrace(mode, meta={
        "seed": config.seed,
        "disturbance_mode": config.disturbance_mode,
        "realized_parameter": "theta_bar + uniform/vertex draw in Theta_Delta" if mode == "lpv" else "drawn in Theta",
        "gain_mode": policy_cfg.gain_mode,
        "initial_constraint": policy_cfg.initial_constraint,
    })
    theta = draw_theta(0)
    problem = ctrl.problem(0, theta)
    if not is_feasible(problem.spec, x):
        trace.states.append(x)
        trace.statuses.append(QpStatus.INFEASIBLE)
        trace.values.append(np.inf)
        return trace

    prev = None
    for k in range(steps + 1):
        if k > 0:
            theta = draw_theta(k)
            problem = ctrl.problem(k, theta)
        if prev is not None and "shift_candidate" in config.monitors:
            prev_problem, prev_sol, d_prev = prev
            policy = prev_problem.policy if corrupt_gains is None else corrupt_gains(prev_problem.policy)
            step = StepData(prev_sol.inputs, x, d_prev, prev_problem.spec.schedule,
                            problem.spec.schedule, mode, horizon_n)
            verdict = shift_candidate_check(step, policy, problem.tightened,
                                            problem.spec.initial_set, problem.spec.terminal)
            report = {"shift_candidate": verdict.to_json()}
            if mode == "lpv":
                report["shift_candidate_complete"] = shift_candidate_check(
                    step, policy, problem.tightened, problem.spec.initial_set,
                    problem.spec.terminal, variant="complete").to_json()
            trace.monitor_reports[k - 1].update(report)
        trace.states.append(x.copy())
        res = control_step(problem.spec, x)
        trace.statuses.append(res.status)
        trace.values.append(res.value)
        if k == steps:
            break
        if res.status != QpStatus.OPTIMAL:
            trace.feasibility_violation = True
            break
        a_k, b_k = eval_matrices(model, theta)
        w = w_sampler.draw(rng, config.disturbance_mode)
        x_next = a_k @ x + b_k @ res.u + w
        sched = problem.spec.schedule
        d = x_next - (sched.a_seq[0] @ x + sched.b_seq[0] @ res.u)
        trace.inputs.append(res.u.copy())
        trace.thetas.append(np.asarray(theta, dtype=float).copy())
        trace.nominal_thetas.append(sched.theta_bar[0].copy() if sched.theta_bar.size else theta.copy())
        trace.additive.append(w)
        trace.disturbances.append(d if mode == "robust" else w)
        trace.stage_costs.append(cost(x, res.u))
        trace.monitor_reports.append({})
        prev = (problem, res.solution, d if mode == "robust" else w)
        x = x_next
    if "value_decrease" in config.monitors and len(trace.values) >= 2:
        trace.meta["value_decrease"] = value_decrease_check(trace).to_json()
    return trace


def constraint_violation(model: LpvModel, trace: SimTrace) -> float:
    """Largest violation of the state and input sets along a trace."""
    worst = -np.inf
    for k, u in enumerate(trace.inputs):
        worst = max(worst, _violation(model.u_set, u), _violation(model.x_set, trace.states[k + 1]))
    if trace.states:
        worst = max(worst, _violation(model.x_set, trace.states[0]))
    return float(worst)


def random_feasible_states(problem: Problem, count: int, seed, box=None) -> np.ndarray:
    """Uniform draws over a box (default: the state set's) kept when feasible."""
    rng = np.random.default_rng(seed)
    model_box = box or bounding_box(problem.spec.initial_set or _state_box(problem))
    out: list[np.ndarray] = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > 10_000 * count:
            raise SimulationError("could not find feasible initial states")
        x = rng.uniform(*model_box)
        if is_feasible(problem.spec, x):
            out.append(x)
    return np.array(out)


def _state_box(problem: Problem) -> PolytopeH:
    return problem.tightened.state_set(problem.spec.horizon_n)


def write_trace_json(trace: SimTrace, path, header: dict | None = None) -> None:
    data = trace.to_json()
    if header:
        data = {"header": header, **data}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1)


__all__: Sequence[str] = [
    "ParameterMode",
    "SimConfig",
    "SimTrace",
    "StepData",
    "ShiftVerdict",
    "ValueReport",
    "run_closed_loop",
    "sample_parameter_path",
    "shift_candidate_check",
    "shift_candidate_inputs",
    "value_decrease_check",
    "constraint_violation",
    "random_feasible_states",
    "write_trace_json",
]
