"""Parameter-affine system ``x+ = A(theta) x + B(theta) u + w`` and its sets."""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from drmpc.polytope import (
    PolytopeH,
    PolytopeV,
    PolytopeError,
    as_vertices,
    contains,
    polytope_from_json,
    pontryagin_diff,
)

MAX_VERTEX_TUPLES = 20_000


class ModelError(ValueError):
    pass


class ScheduleError(ModelError):
    """A nominal parameter path violates the containment condition."""

    def __init__(self, index: int, message: str):
        super().__init__(message)
        self.index = index


class DisturbanceKind(str, enum.Enum):
    ROBUST_D = "robust_D"
    LPV_DTHETA = "lpv_Dtheta"
    ADDITIVE_W = "additive_W"


def _as_matrix(a, rows: int, cols: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim == 1 and cols == 1:
        arr = arr.reshape(-1, 1)
    if arr.shape != (rows, cols):
        raise ModelError(f"{name} has shape {arr.shape}, expected {(rows, cols)}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LpvModel:
    a_bar: np.ndarray
    a_terms: tuple
    b_bar: np.ndarray
    b_terms: tuple
    theta_set: PolytopeH
    theta_delta_set: PolytopeH
    w_set: PolytopeV
    x_set: PolytopeH
    u_set: PolytopeH

    def __post_init__(self):
        a_bar = np.atleast_2d(np.array(self.a_bar, dtype=float))
        n = a_bar.shape[0]
        b_bar = np.array(self.b_bar, dtype=float)
        if b_bar.ndim == 1:
            b_bar = b_bar.reshape(n, -1)
        m = b_bar.shape[1]
        p = len(self.a_terms)
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("a_bar", _as_matrix(a_bar, n, n, "a_bar"))
        set_("b_bar", _as_matrix(b_bar, n, m, "b_bar"))
        set_("a_terms", tuple(_as_matrix(a, n, n, f"a_terms[{i}]") for i, a in enumerate(self.a_terms)))
        if len(self.b_terms) != p:
            raise ModelError(f"{len(self.b_terms)} b_terms for {p} a_terms")
        set_("b_terms", tuple(_as_matrix(b, n, m, f"b_terms[{i}]") for i, b in enumerate(self.b_terms)))
        dims = {
            "theta_set": (self.theta_set, p),
            "theta_delta_set": (self.theta_delta_set, p),
            "w_set": (self.w_set, n),
            "x_set": (self.x_set, n),
            "u_set": (self.u_set, m),
        }
        for name, (s, d) in dims.items():
            if s.dim != d:
                raise ModelError(f"{name} has dimension {s.dim}, expected {d}")
            if isinstance(s, PolytopeH):
                ok = contains(s, np.zeros(d))
            else:
                ok = _hull_contains_origin(s)
            if not ok:
                raise ModelError(f"{name} must contain the origin")

    @property
    def n(self) -> int:
        return self.a_bar.shape[0]

    @property
    def m(self) -> int:
        return self.b_bar.shape[1]

    @property
    def p(self) -> int:
        return len(self.a_terms)

    def to_json(self) -> dict:
        return {
            "a_bar": self.a_bar.tolist(),
            "a_terms": [a.tolist() for a in self.a_terms],
            "b_bar": self.b_bar.tolist(),
            "b_terms": [b.tolist() for b in self.b_terms],
            "theta_set": self.theta_set.to_json(),
            "theta_delta_set": self.theta_delta_set.to_json(),
            "w_set": self.w_set.to_json(),
            "x_set": self.x_set.to_json(),
            "u_set": self.u_set.to_json(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "LpvModel":
        def h(key):
            s = polytope_from_json(data[key])
            if isinstance(s, PolytopeV):
                raise ModelError(f"{key} must be given in halfspace form")
            return s

        w = polytope_from_json(data["w_set"])
        if isinstance(w, PolytopeH):
            w = as_vertices(w)
        return cls(
            a_bar=data["a_bar"],
            a_terms=tuple(data["a_terms"]),
            b_bar=data["b_bar"],
            b_terms=tuple(data["b_terms"]),
            theta_set=h("theta_set"),
            theta_delta_set=h("theta_delta_set"),
            w_set=w,
            x_set=h("x_set"),
            u_set=h("u_set"),
        )

    def with_theta_delta(self, theta_delta_set: PolytopeH) -> "LpvModel":
        data = dict(self.__dict__)
        data["theta_delta_set"] = theta_delta_set
        return LpvModel(**data)


def _hull_contains_origin(p: PolytopeV) -> bool:
    from drmpc._lp import solve_lp

    v = p.vertices
    k = v.shape[0]
    # origin = sum(l_i v_i), sum(l_i) = 1, l >= 0
    a_eq = np.vstack([v.T, np.ones((1, k))])
    b_eq = np.concatenate([np.zeros(p.dim), [1.0]])
    res = solve_lp(np.zeros(k), a_eq=a_eq, b_eq=b_eq, bounds=[(0.0, None)] * k)
    return res.status == "optimal"


def load_model(path: str | Path) -> LpvModel:
    with open(path, encoding="utf-8") as fh:
        return LpvModel.from_json(json.load(fh))


def benchmark_path() -> Path:
    return Path(str(resources.files("drmpc.data") / "benchmark_fleming.json"))


def benchmark_model(theta_delta_max: float | None = None) -> LpvModel:
    """The shipped two-state benchmark; optionally with ``Theta_Delta = [-d, d]^2``."""
    model = load_model(benchmark_path())
    if theta_delta_max is not None:
        d = float(theta_delta_max)
        model = model.with_theta_delta(PolytopeH.box([-d] * model.p, [d] * model.p))
    return model


def eval_matrices(model: LpvModel, theta) -> tuple[np.ndarray, np.ndarray]:
    """``(A(theta), B(theta))``."""
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != model.p:
        raise ModelError(f"theta has length {theta.size}, model has p={model.p}")
    a = model.a_bar + sum((t * ai for t, ai in zip(theta, model.a_terms)), np.zeros_like(model.a_bar))
    b = model.b_bar + sum((t * bi for t, bi in zip(theta, model.b_terms)), np.zeros_like(model.b_bar))
    return a, b


@dataclass(frozen=True, eq=False)
class DisturbanceSet:
    set_v: PolytopeV
    kind: DisturbanceKind

    @property
    def vertices(self) -> np.ndarray:
        return self.set_v.vertices

    def to_json(self) -> dict:
        return {"kind": self.kind.value, **self.set_v.to_json()}


def build_additive_set(model: LpvModel, kind: str) -> DisturbanceSet:
    """Lump parametric uncertainty and additive noise into one polytope.

    ``kind="robust"`` uses the full parameter set, ``kind="lpv"`` the
    prediction-error set. The hull is taken over images of vertex tuples,
    which is exact because the map is bilinear in (theta, (x, u)) and affine
    in w.
    """
    if kind == "robust":
        theta_set, out_kind = model.theta_set, DisturbanceKind.ROBUST_D
    elif kind == "lpv":
        theta_set, out_kind = model.theta_delta_set, DisturbanceKind.LPV_DTHETA
    else:
        raise ModelError(f"unknown disturbance kind {kind!r}")
    try:
        tv = as_vertices(theta_set).vertices
        xv = as_vertices(model.x_set).vertices
        uv = as_vertices(model.u_set).vertices
    except PolytopeError as exc:
        raise ModelError(f"cannot enumerate vertices: {exc}") from exc
    wv = model.w_set.vertices
    count = len(tv) * len(xv) * len(uv) * len(wv)
    if count > MAX_VERTEX_TUPLES:
        raise ModelError(f"{count} vertex tuples exceed the cap of {MAX_VERTEX_TUPLES}")
    points = []
    for theta in tv:
        da = sum((t * ai for t, ai in zip(theta, model.a_terms)), np.zeros_like(model.a_bar))
        db = sum((t * bi for t, bi in zip(theta, model.b_terms)), np.zeros_like(model.b_bar))
        for x, u in itertools.product(xv, uv):
            base = da @ x + db @ u
            points.extend(base + w for w in wv)
    return DisturbanceSet(PolytopeV(np.array(points)), out_kind)


def additive_w(model: LpvModel) -> DisturbanceSet:
    return DisturbanceSet(model.w_set, DisturbanceKind.ADDITIVE_W)


@dataclass(frozen=True, eq=False)
class NominalSchedule:
    """Predicted parameters ``theta_bar[0..N]`` with the matrices they induce.

    ``theta_bar[0]`` is the measured parameter of the current step.
    """

    theta_bar: np.ndarray
    a_seq: tuple
    b_seq: tuple

    @property
    def horizon(self) -> int:
        return len(self.a_seq) - 1

    def to_json(self) -> dict:
        return {"theta_bar": np.asarray(self.theta_bar).tolist()}


def constant_schedule(a: np.ndarray, b: np.ndarray, horizon: int, theta=None) -> NominalSchedule:
    theta_bar = np.zeros((horizon + 1, 0)) if theta is None else np.tile(theta, (horizon + 1, 1))
    return NominalSchedule(theta_bar, tuple([a] * (horizon + 1)), tuple([b] * (horizon + 1)))


def admissible_nominal_set(model: LpvModel) -> PolytopeH:
    """Nominal parameters ``t`` with ``t + Theta_Delta`` inside ``Theta``."""
    return pontryagin_diff(model.theta_set, as_vertices(model.theta_delta_set))


def make_schedule(model: LpvModel, theta_path, horizon: int, tol: float = 1e-9) -> NominalSchedule:
    path = np.atleast_2d(np.asarray(theta_path, dtype=float))
    if path.shape[1] != model.p:
        raise ModelError(f"parameter path has width {path.shape[1]}, expected {model.p}")
    if path.shape[0] < horizon + 1:
        raise ModelError(f"parameter path has {path.shape[0]} points, need {horizon + 1}")
    path = path[: horizon + 1]
    admissible = admissible_nominal_set(model)
    if not contains(model.theta_set, path[0], tol):
        raise ScheduleError(0, "measured parameter lies outside Theta")
    for j in range(1, horizon + 1):
        if not contains(admissible, path[j], tol):
            raise ScheduleError(j, f"theta_bar[{j}] + Theta_Delta is not contained in Theta")
    mats = [eval_matrices(model, t) for t in path]
    return NominalSchedule(path, tuple(a for a, _ in mats), tuple(b for _, b in mats))
