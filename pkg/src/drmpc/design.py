"""Offline assembly of robust and LPV problem instances.

Both controllers share the pipeline gains -> disturbance set -> tightening ->
FTOCP. The robust controller builds it once; the LPV controller rebuilds it
from the current nominal parameter path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from drmpc.deadbeat import DeadbeatPolicy, deadbeat_horizon, solve_gains
from drmpc.ftocp import FtocpSpec, StageCost
from drmpc.lpv_model import (
    DisturbanceSet,
    LpvModel,
    additive_w,
    build_additive_set,
    constant_schedule,
    make_schedule,
)
from drmpc.polytope import PolytopeH
from drmpc.tightening import TightenedSets, tighten

INITIAL_CONSTRAINTS = ("x", "none", "tightened")
GAIN_MODES = ("per_step", "frozen")


@dataclass(frozen=True)
class ControllerConfig:
    """Design choices shared by both controllers.

    ``deadbeat_m=None`` picks the smallest horizon with full-rank ``P_M``.
    ``initial_constraint`` selects what ``x_{0|0}`` must satisfy: the state
    set (``"x"``), nothing, or the first tightened state set.
    """

    deadbeat_m: int | None = None
    gain_mode: str = "per_step"
    terminal: object = "origin"
    initial_constraint: str = "x"

    def __post_init__(self):
        if self.gain_mode not in GAIN_MODES:
            raise ValueError(f"gain_mode must be one of {GAIN_MODES}")
        if self.initial_constraint not in INITIAL_CONSTRAINTS:
            raise ValueError(f"initial_constraint must be one of {INITIAL_CONSTRAINTS}")
        if self.deadbeat_m is not None and self.deadbeat_m < 1:
            raise ValueError("deadbeat_m must be positive")


@dataclass(eq=False)
class Problem:
    spec: FtocpSpec
    policy: DeadbeatPolicy
    disturbance: DisturbanceSet
    mode: str

    @property
    def tightened(self) -> TightenedSets:
        return self.spec.tightened


def _initial_set(model: LpvModel, tightened: TightenedSets, choice: str) -> PolytopeH | None:
    if choice == "x":
        return model.x_set
    if choice == "tightened":
        return tightened.state_set(1)
    return None


def nominal_policy(model: LpvModel, cfg: ControllerConfig) -> DeadbeatPolicy:
    """Gains for the constant nominal pair ``(A_bar, B_bar)``."""
    a, b = model.a_bar, model.b_bar
    m_h = cfg.deadbeat_m or deadbeat_horizon([a] * model.n, [b] * model.n)
    return solve_gains([a] * m_h, [b] * m_h, m_h)


def robust_problem(
    model: LpvModel,
    cost: StageCost,
    horizon_n: int,
    cfg: ControllerConfig = ControllerConfig(),
    d_set: DisturbanceSet | None = None,
    policy: DeadbeatPolicy | None = None,
) -> Problem:
    policy = policy or nominal_policy(model, cfg)
    d_set = d_set or build_additive_set(model, "robust")
    tightened = tighten(policy, d_set, None, model.u_set, model.x_set, horizon_n, "robust")
    schedule = constant_schedule(model.a_bar, model.b_bar, horizon_n)
    spec = FtocpSpec(
        schedule, tightened, cost, horizon_n, cfg.terminal,
        _initial_set(model, tightened, cfg.initial_constraint),
    )
    return Problem(spec, policy, d_set, "robust")


def lpv_problem(
    model: LpvModel,
    theta_path,
    cost: StageCost,
    horizon_n: int,
    cfg: ControllerConfig = ControllerConfig(),
    d_set: DisturbanceSet | None = None,
    frozen: DeadbeatPolicy | None = None,
) -> Problem:
    """Problem for the path ``theta_path[0..N]``; entry 0 is the measured parameter.

    With ``gain_mode="per_step"`` the gains follow the nominal chain of this
    path; ``"frozen"`` reuses ``frozen`` (or the nominal-pair gains).
    """
    schedule = make_schedule(model, theta_path, horizon_n)
    if cfg.gain_mode == "per_step":
        m_h = cfg.deadbeat_m or deadbeat_horizon(schedule.a_seq, schedule.b_seq)
        policy = solve_gains(schedule.a_seq, schedule.b_seq, m_h)
    else:
        policy = frozen or nominal_policy(model, cfg)
    d_set = d_set or build_additive_set(model, "lpv")
    tightened = tighten(policy, d_set, additive_w(model), model.u_set, model.x_set, horizon_n, "lpv")
    spec = FtocpSpec(
        schedule, tightened, cost, horizon_n, cfg.terminal,
        _initial_set(model, tightened, cfg.initial_constraint),
    )
    return Problem(spec, policy, d_set, "lpv")


def constant_path(model: LpvModel, horizon_n: int, theta=None) -> np.ndarray:
    theta = np.zeros(model.p) if theta is None else np.asarray(theta, dtype=float)
    return np.tile(theta, (horizon_n + 1, 1))
