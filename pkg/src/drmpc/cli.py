"""Batch command-line front end.

    drmpc [--config run.json] [--output DIR] [--seed N] [--strict] [--dump-qp FILE] COMMAND

Commands: gains, sets, simulate, roa, experiment. Every output file carries
the SHA-256 of the effective configuration, so identical inputs give
byte-identical outputs.

Exit codes: 0 success, 2 infeasible problem or empty set, 3 numerical
failure, 4 configuration or model error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from drmpc.deadbeat import (
    DeadbeatPolicy,
    SynthesisError,
    UncontrollableError,
    deadbeat_horizon,
    solve_gains,
)
from drmpc.design import ControllerConfig, Problem, lpv_problem, nominal_policy, robust_problem
from drmpc.ftocp import CostError, StageCost, assemble, problem_dimensions
from drmpc.lpv_model import LpvModel, ModelError, benchmark_path, load_model, make_schedule
from drmpc.polytope import PolytopeError, PolytopeH, bounding_box, polytope_from_json
from drmpc.qp import QpStatus
from drmpc.roa import GridSpec, lpv_sweep, rinc_experiment, robust_sweep
from drmpc.simulator import (
    ParameterMode,
    SimConfig,
    SimulationError,
    constraint_violation,
    run_closed_loop,
    sample_parameter_path,
    value_decrease_check,
    write_trace_json,
)
from drmpc.tightening import TighteningInfeasibleError

log = logging.getLogger("drmpc")

EXIT_OK, EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_CONFIG = 0, 2, 3, 4


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CostConfig(_Strict):
    q: list[list[float]]
    r: list[list[float]]


class ParameterConfig(_Strict):
    kind: Literal["constant", "random_walk", "replay"] = "constant"
    value: list[float] | None = None
    delta_max: float = Field(0.0, ge=0.0)
    path: list[list[float]] | None = None


class SimSection(_Strict):
    steps: int = Field(100, ge=1)
    x0: list[float] | None = None
    disturbance_mode: Literal["zero", "vertices", "uniform"] = "vertices"
    parameter_mode: ParameterConfig | None = None
    monitors: list[Literal["shift_candidate", "value_decrease"]] = ["shift_candidate", "value_decrease"]


class GridConfig(_Strict):
    lower: list[float]
    upper: list[float]
    resolution: list[int]


class RoaSection(_Strict):
    grid: GridConfig | None = None
    resolution: int = Field(121, ge=2)
    n_list: list[int] = [4, 6, 8, 10, 12, 14]
    method: Literal["rows", "points"] = "rows"
    theta_path: list[list[float]] | None = None
    delta_max: float = Field(0.1, ge=0.0)
    realizations: int = Field(20, ge=2)

    @field_validator("n_list")
    @classmethod
    def _ascending(cls, v):
        if not v or v != sorted(v) or v[0] < 1:
            raise ValueError("n_list must be a nonempty ascending list of positive horizons")
        return v


class RunConfig(_Strict):
    model_path: str | None = None
    mode: Literal["robust", "lpv"] = "robust"
    horizon_n: int = Field(10, ge=1)
    deadbeat_m: int | None = Field(None, ge=1)
    cost: CostConfig | None = None
    terminal: str = "origin"
    initial_constraint: Literal["x", "none", "tightened"] = "x"
    gain_mode: Literal["per_step", "frozen"] = "per_step"
    theta_delta_max: float | None = Field(None, ge=0.0)
    theta_path: list[list[float]] | None = None
    sim: SimSection = SimSection()
    roa: RoaSection = RoaSection()
    output_dir: str = "drmpc_out"
    seed: int = 0

    def digest(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class Context:
    """Everything a command needs, resolved once from the config."""

    def __init__(self, cfg: RunConfig, strict: bool, dump_qp: str | None):
        self.cfg = cfg
        self.strict = strict
        self.dump_qp = dump_qp
        path = Path(cfg.model_path) if cfg.model_path else benchmark_path()
        if not path.exists():
            raise CliError(EXIT_CONFIG, f"model file {path} does not exist")
        raw = json.loads(path.read_text(encoding="utf-8"))
        model = load_model(path)
        if cfg.theta_delta_max is not None:
            d = cfg.theta_delta_max
            model = model.with_theta_delta(PolytopeH.box([-d] * model.p, [d] * model.p))
        self.model: LpvModel = model
        cost = cfg.cost.model_dump() if cfg.cost else raw.get("cost")
        self.cost = StageCost(cost["q"], cost["r"]) if cost else StageCost.identity(model.n, model.m)
        m_h = cfg.deadbeat_m if cfg.deadbeat_m is not None else raw.get("deadbeat_m")
        if m_h is not None and cfg.horizon_n < m_h:
            raise CliError(EXIT_CONFIG, f"horizon_n={cfg.horizon_n} is shorter than deadbeat_m={m_h}")
        terminal: object = "origin"
        if cfg.terminal != "origin":
            tpath = Path(cfg.terminal)
            if not tpath.exists():
                raise CliError(EXIT_CONFIG, f"terminal set file {tpath} does not exist")
            terminal = polytope_from_json(json.loads(tpath.read_text(encoding="utf-8")))
            if not isinstance(terminal, PolytopeH):
                raise CliError(EXIT_CONFIG, "terminal set must be given in halfspace form")
        self.controller = ControllerConfig(m_h, cfg.gain_mode, terminal, cfg.initial_constraint)
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.header = {
            "config_sha256": cfg.digest(),
            "seed": cfg.seed,
            "model_sha256": hashlib.sha256(
                json.dumps(model.to_json(), sort_keys=True).encode()).hexdigest(),
        }

    def header_line(self) -> str:
        return " ".join(f"{k}={v}" for k, v in self.header.items())

    def write_json(self, name: str, data: dict) -> Path:
        path = self.out / name
        path.write_text(json.dumps({"header": self.header, **data}, indent=1) + "\n", encoding="utf-8")
        return path

    def lpv_path(self) -> np.ndarray:
        n = self.cfg.horizon_n
        if self.cfg.theta_path is not None:
            return np.asarray(self.cfg.theta_path, dtype=float)
        return np.zeros((n + 1, self.model.p))

    def problem(self, horizon_n: int | None = None) -> Problem:
        n = horizon_n or self.cfg.horizon_n
        if self.cfg.mode == "robust":
            return robust_problem(self.model, self.cost, n, self.controller)
        return lpv_problem(self.model, self.lpv_path(), self.cost, n, self.controller)

    def x0(self) -> np.ndarray:
        x0 = self.cfg.sim.x0
        return np.zeros(self.model.n) if x0 is None else np.asarray(x0, dtype=float)

    def maybe_dump(self, problem: Problem) -> None:
        if self.dump_qp:
            assemble(problem.spec, self.x0()).dump(self.dump_qp)
            print(f"QP at x0 written to {self.dump_qp}")


def _policy(ctx: Context) -> DeadbeatPolicy:
    model, cfg = ctx.model, ctx.controller
    if ctx.cfg.mode == "robust" or cfg.gain_mode == "frozen":
        return nominal_policy(model, cfg)
    sched = make_schedule(model, ctx.lpv_path(), ctx.cfg.horizon_n)
    m_h = cfg.deadbeat_m or deadbeat_horizon(sched.a_seq, sched.b_seq)
    return solve_gains(sched.a_seq, sched.b_seq, m_h)


def cmd_gains(ctx: Context) -> int:
    pol = _policy(ctx)
    path = ctx.write_json("policy.json", {"policy": pol.to_json(), "digest": pol.digest()})
    print(f"M = {pol.horizon_m}  residual = {pol.residual:.3e}")
    for j, k in enumerate(pol.gains):
        print(f"  ||K_{j}|| = {np.linalg.norm(k):.6f}")
    print(f"policy written to {path}")
    return EXIT_OK


def _widths(poly: PolytopeH) -> list[float]:
    lo, hi = bounding_box(poly)
    return [float(v) for v in hi - lo]


def cmd_sets(ctx: Context) -> int:
    problem = ctx.problem()
    ts = problem.tightened
    meta = {**ctx.header, "policy_digest": problem.policy.digest(), "mode": ts.mode,
            "horizon_n": ts.horizon}
    ctx.write_json("policy.json", {"policy": problem.policy.to_json(), "digest": problem.policy.digest()})
    ctx.write_json("tightened_sets.json", ts.to_json(meta))
    lines = [f"# {ctx.header_line()}", "# step  input_widths  state_widths"]
    for j in range(ts.horizon):
        lines.append(f"{j:4d}  {_widths(ts.input_sets[j])}  {_widths(ts.state_set(j + 1))}")
    (ctx.out / "sets_table.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines[1:]))
    dims = problem_dimensions(problem.spec)
    print(f"decision variables {dims['decision_variables']}, inequality rows {dims['inequality_rows']}, "
          f"equality rows {dims['equality_rows']}")
    ctx.maybe_dump(problem)
    return EXIT_OK


def _param_mode(cfg: RunConfig) -> ParameterMode | None:
    pm = cfg.sim.parameter_mode
    if pm is None:
        return None
    return ParameterMode(pm.kind, None if pm.value is None else tuple(pm.value), pm.delta_max,
                         None if pm.path is None else tuple(map(tuple, pm.path)))


def cmd_simulate(ctx: Context) -> int:
    cfg = ctx.cfg
    sim = SimConfig(cfg.sim.steps, cfg.seed, cfg.sim.disturbance_mode, _param_mode(cfg),
                    frozenset(cfg.sim.monitors))
    x0 = ctx.x0()
    if ctx.dump_qp:
        ctx.maybe_dump(ctx.problem())
    trace = run_closed_loop(ctx.model, cfg.mode, ctx.controller, ctx.cost, cfg.horizon_n, sim, x0)
    trace.write_csv(ctx.out / "trace.csv", ctx.header_line())
    write_trace_json(trace, ctx.out / "trace.json", ctx.header)
    if trace.length == 0 and trace.statuses and trace.statuses[0] != QpStatus.OPTIMAL:
        print("initial state is infeasible")
        return EXIT_INFEASIBLE
    shift_fail = trace.shift_failures()
    report = value_decrease_check(trace) if trace.length >= 1 else None
    print(f"steps {trace.length}, feasibility violation {trace.feasibility_violation}, "
          f"shift-candidate failures {len(shift_fail)}, max constraint violation "
          f"{constraint_violation(ctx.model, trace):.2e}")
    if report is not None:
        print(f"value decrease ok {report.decrease_ok}, calibrated sigma {report.max_ratio:.4g}")
    if trace.statuses and trace.statuses[-1] == QpStatus.NUMERICAL_FAILURE:
        return EXIT_NUMERICAL
    if trace.feasibility_violation:
        return EXIT_INFEASIBLE
    if ctx.strict and (shift_fail or (report is not None and not report.decrease_ok)):
        print("monitor failure (strict mode)")
        return EXIT_INFEASIBLE
    return EXIT_OK


def _grid(ctx: Context) -> GridSpec:
    g = ctx.cfg.roa.grid
    if g is None:
        return GridSpec.over(ctx.model.x_set, ctx.cfg.roa.resolution)
    return GridSpec(tuple(g.lower), tuple(g.upper), tuple(g.resolution))


def cmd_roa(ctx: Context) -> int:
    cfg = ctx.cfg
    grid = _grid(ctx)
    n_list = cfg.roa.n_list
    if cfg.mode == "robust":
        results = robust_sweep(ctx.model, ctx.cost, n_list, grid, ctx.controller)
        path = None
    else:
        if cfg.roa.theta_path is not None:
            path = np.asarray(cfg.roa.theta_path, dtype=float)
        else:
            path = sample_parameter_path(ctx.model.theta_set, cfg.roa.delta_max, max(n_list) + 1,
                                         cfg.seed, ctx.model.theta_delta_set)
        results = lpv_sweep(ctx.model, path, ctx.cost, n_list, grid, ctx.controller)
    summary = {}
    for n, res in results.items():
        res.write_mask_csv(ctx.out / f"roa_N{n}_mask.csv", ctx.header_line())
        res.write_points(ctx.out / f"roa_N{n}_points.txt", ctx.header_line())
        summary[str(n)] = res.to_json()
        print(f"N={n:3d}  feasible points {res.count:6d}  area {res.area:10.2f}")
    ctx.write_json("roa.json", {"mode": cfg.mode, "theta_path": None if path is None else path.tolist(),
                                "results": summary})
    return EXIT_OK


def cmd_experiment(ctx: Context) -> int:
    cfg = ctx.cfg
    model = ctx.model
    d = cfg.roa.delta_max
    model = model.with_theta_delta(PolytopeH.box([-d] * model.p, [d] * model.p))
    table = rinc_experiment(model, ctx.cost, ctx.controller.deadbeat_m, cfg.roa.n_list, d,
                            cfg.roa.realizations, cfg.seed, _grid(ctx), ctx.controller)
    table.write_json(ctx.out / "rinc.json", ctx.header)
    print(f"delta_max {d}, realizations {table.realizations}, resampled paths {table.resampled}")
    print("   N   r_avmin  r_avmax  r_inc(N->next)")
    for n in table.n_list:
        s = table.per_n[n]
        inc = table.r_inc.get(n)
        inc_txt = f"{inc[0]:.1f} +- {inc[1]:.1f}" if inc else "-"
        print(f"{n:4d}  {s['r_avmin']:7.3f}  {s['r_avmax']:7.3f}  {inc_txt}")
    return EXIT_OK


COMMANDS = {
    "gains": cmd_gains,
    "sets": cmd_sets,
    "simulate": cmd_simulate,
    "roa": cmd_roa,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drmpc", description="Deadbeat robust MPC batch tools")
    parser.add_argument("--config", help="run configuration JSON")
    parser.add_argument("--output", help="output directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, help="random seed (overrides seed)")
    parser.add_argument("--strict", action="store_true", help="nonzero exit on any monitor failure")
    parser.add_argument("--dump-qp", help="write the QP at the configured x0 in plain text")
    parser.add_argument("command", choices=sorted(COMMANDS))
    return parser


def load_config(path: str | None, output: str | None, seed: int | None) -> RunConfig:
    data = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise CliError(EXIT_CONFIG, f"config file {p} does not exist")
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"config is not valid JSON: {exc}") from exc
    if output is not None:
        data["output_dir"] = output
    if seed is not None:
        data["seed"] = seed
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise CliError(EXIT_CONFIG, f"invalid config:\n{exc}") from exc


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.output, args.seed)
        ctx = Context(cfg, args.strict, args.dump_qp)
        return COMMANDS[args.command](ctx)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except TighteningInfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (UncontrollableError, SynthesisError) as exc:
        print(f"error: gain synthesis failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelError, PolytopeError, CostError, SimulationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except np.linalg.LinAlgError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
