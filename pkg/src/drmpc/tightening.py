"""Tightened input/state constraint sequences for the deadbeat MPC problems."""

from __future__ import annotations

from dataclasses import dataclass

from drmpc.deadbeat import RESIDUAL_TOL, DeadbeatPolicy
from drmpc.lpv_model import DisturbanceSet
from drmpc.polytope import PolytopeH, PolytopeV, is_empty, linear_image, pontryagin_diff


class TighteningInfeasibleError(ValueError):
    """A tightened set came out empty; the disturbance set is too large."""

    def __init__(self, kind: str, index: int):
        super().__init__(f"tightened {kind} set at prediction step {index} is empty")
        self.kind = kind
        self.index = index


@dataclass(frozen=True, eq=False)
class TightenedSets:
    """``input_sets[j]`` constrains ``u_{j|0}`` (j = 0..N-1);
    ``state_sets[j-1]`` constrains ``x_{j|0}`` (j = 1..N)."""

    input_sets: tuple
    state_sets: tuple
    mode: str

    @property
    def horizon(self) -> int:
        return len(self.input_sets)

    def state_set(self, j: int) -> PolytopeH:
        return self.state_sets[j - 1]

    def to_json(self, meta: dict | None = None) -> dict:
        out = {
            "mode": self.mode,
            "input_sets": [s.to_json() for s in self.input_sets],
            "state_sets": [s.to_json() for s in self.state_sets],
        }
        if meta:
            out["meta"] = meta
        return out

    @classmethod
    def from_json(cls, data: dict) -> "TightenedSets":
        return cls(
            tuple(PolytopeH.from_json(s) for s in data["input_sets"]),
            tuple(PolytopeH.from_json(s) for s in data["state_sets"]),
            data["mode"],
        )


def _subtract_all(base: PolytopeH, terms: list[PolytopeV]) -> PolytopeH:
    out = base
    for t in terms:
        out = pontryagin_diff(out, t)
    return out


def _input_terms(policy: DeadbeatPolicy, d: PolytopeV, w: PolytopeV | None, j: int, mode: str):
    k = policy.gains
    if mode == "robust":
        # U - K_0 D - K_1 D - ... - K_{j-1} D
        return [linear_image(k[i], d) for i in range(j)]
    # U - K_{j-1} W - K_{j-2} D_theta - ... - K_0 D_theta
    return [linear_image(k[j - 1], w)] + [linear_image(k[i], d) for i in range(j - 2, -1, -1)]


def _state_terms(policy: DeadbeatPolicy, d: PolytopeV, w: PolytopeV | None, j: int, mode: str):
    phi = policy.phi
    if mode == "robust":
        # X - D - Phi_0 D - ... - Phi_{j-2} D
        return [d] + [linear_image(phi[i], d) for i in range(j - 1)]
    # X - Phi_{j-2} W - Phi_{j-3} D_theta - ... - Phi_0 D_theta - D_theta  (j=1: X - W)
    if j == 1:
        return [w]
    return [linear_image(phi[j - 2], w)] + [linear_image(phi[i], d) for i in range(j - 3, -1, -1)] + [d]


def tighten(
    policy: DeadbeatPolicy,
    d_set: DisturbanceSet | PolytopeV,
    w_set: DisturbanceSet | PolytopeV | None,
    u_set: PolytopeH,
    x_set: PolytopeH,
    horizon_n: int,
    mode: str = "robust",
) -> TightenedSets:
    """Build the tightened sets, saturating at the deadbeat horizon.

    In ``robust`` mode ``d_set`` is the lumped set D and ``w_set`` is ignored.
    In ``lpv`` mode ``d_set`` is D_theta and ``w_set`` is W.
    """
    if mode not in ("robust", "lpv"):
        raise ValueError(f"unknown tightening mode {mode!r}")
    m_h = policy.horizon_m
    if horizon_n < m_h:
        raise ValueError(f"prediction horizon N={horizon_n} is shorter than M={m_h}")
    if policy.residual > RESIDUAL_TOL:
        raise ValueError(f"policy residual {policy.residual:.2e} is too large")
    d = d_set.set_v if isinstance(d_set, DisturbanceSet) else d_set
    w = w_set.set_v if isinstance(w_set, DisturbanceSet) else w_set
    if mode == "lpv" and w is None:
        raise ValueError("lpv mode needs the additive set W")

    inputs: list[PolytopeH] = [u_set]
    for j in range(1, m_h + 1):
        inputs.append(_subtract_all(u_set, _input_terms(policy, d, w, j, mode)))
    states: list[PolytopeH] = []
    for j in range(1, m_h + 1):
        states.append(_subtract_all(x_set, _state_terms(policy, d, w, j, mode)))

    for j, s in enumerate(inputs):
        if is_empty(s):
            raise TighteningInfeasibleError("input", j)
    for j, s in enumerate(states, start=1):
        if is_empty(s):
            raise TighteningInfeasibleError("state", j)

    # saturation: the step-M set is shared by every later step
    input_sets = tuple(inputs[j] if j <= m_h else inputs[m_h] for j in range(horizon_n))
    state_sets = tuple(states[j - 1] if j <= m_h else states[m_h - 1] for j in range(1, horizon_n + 1))
    return TightenedSets(input_sets, state_sets, mode)
