"""Feasible-set (region of attraction) estimates on state grids.

Two sweep methods give the same mask:

* ``points`` runs one phase-1 LP per grid point;
* ``rows`` (2-D only) uses that the feasible set is convex, so its slice at
  fixed ``x2`` is an interval. Two LPs over ``(x1, U)`` per grid row give the
  interval ends, and grid points inside are feasible.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from drmpc._lp import solve_lp
from drmpc.design import ControllerConfig, lpv_problem, robust_problem
from drmpc.ftocp import FtocpSpec, StageCost, is_feasible
from drmpc.lpv_model import LpvModel, ScheduleError, build_additive_set
from drmpc.polytope import PolytopeH, PolytopeV, bounding_box, convex_hull, polygon_area
from drmpc.simulator import sample_parameter_path
from drmpc.tightening import TighteningInfeasibleError

ROW_TOL = 1e-7


@dataclass(frozen=True)
class GridSpec:
    lower: tuple
    upper: tuple
    resolution: tuple

    def __post_init__(self):
        if not len(self.lower) == len(self.upper) == len(self.resolution):
            raise ValueError("grid bounds and resolution must have the same length")
        if any(r < 2 for r in self.resolution):
            raise ValueError("each axis needs at least two grid points")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("grid lower bounds must be below upper bounds")

    @classmethod
    def over(cls, poly: PolytopeH, resolution: int = 121) -> "GridSpec":
        lo, hi = bounding_box(poly)
        return cls(tuple(map(float, lo)), tuple(map(float, hi)), (resolution,) * poly.dim)

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, r) for lo, hi, r in zip(self.lower, self.upper, self.resolution)]

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(hi - lo) / (r - 1) for lo, hi, r in zip(self.lower, self.upper, self.resolution)])

    @property
    def cell_area(self) -> float:
        return float(np.prod(self.spacing))

    def to_json(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "resolution": list(self.resolution)}


@dataclass(eq=False)
class RoaResult:
    grid_spec: GridSpec
    feasible_mask: np.ndarray  # indexed [i1, i2, ...] along the grid axes
    area: float
    hull_vertices: PolytopeV | None

    @property
    def count(self) -> int:
        return int(self.feasible_mask.sum())

    def feasible_points(self) -> np.ndarray:
        axes = self.grid_spec.axes
        idx = np.argwhere(self.feasible_mask)
        return np.array([[axes[d][i[d]] for d in range(len(axes))] for i in idx]).reshape(-1, len(axes))

    def write_mask_csv(self, path, header: str | None = None) -> None:
        axes = self.grid_spec.axes
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header:
                fh.write(f"# {header}\n")
            writer = csv.writer(fh)
            writer.writerow([f"x{d + 1}" for d in range(len(axes))] + ["feasible"])
            for idx in np.ndindex(*self.feasible_mask.shape):
                writer.writerow([repr(float(axes[d][i])) for d, i in enumerate(idx)]
                                + [int(self.feasible_mask[idx])])

    def write_points(self, path, header: str | None = None) -> None:
        """Feasible points, then the closed hull polyline, as plain columns."""
        with open(path, "w", encoding="utf-8") as fh:
            if header:
                fh.write(f"# {header}\n")
            fh.write("# feasible points\n")
            for pt in self.feasible_points():
                fh.write(" ".join(repr(float(v)) for v in pt) + "\n")
            fh.write("\n# hull polyline\n")
            if self.hull_vertices is not None:
                v = self.hull_vertices.vertices
                for pt in np.vstack([v, v[:1]]):
                    fh.write(" ".join(repr(float(c)) for c in pt) + "\n")

    def to_json(self) -> dict:
        return {
            "grid": self.grid_spec.to_json(),
            "feasible_count": self.count,
            "area": self.area,
            "hull_area": area(self, "hull") if len(self.grid_spec.resolution) == 2 else None,
            "hull_vertices": None if self.hull_vertices is None else self.hull_vertices.vertices.tolist(),
        }


def row_intervals(spec: FtocpSpec, x1_range: tuple[float, float], x2_values) -> list:
    """Feasible ``x1`` interval (or None) for each ``x2`` value, 2-D states only."""
    par = spec.parametric
    nu = par.hessian.shape[0]
    a_ub = np.hstack([-par.ineq_state[:, [0]], par.ineq_normals])
    has_eq = par.eq_state.shape[0] > 0
    a_eq = np.hstack([-par.eq_state[:, [0]], par.eq_normals]) if has_eq else None
    bounds = [tuple(x1_range)] + [(None, None)] * nu
    c = np.zeros(nu + 1)
    c[0] = 1.0
    out = []
    for x2 in x2_values:
        b_ub = par.ineq_const + par.ineq_state[:, 1] * x2
        b_eq = par.eq_state[:, 1] * x2 if has_eq else None
        lo = solve_lp(c, a_ub, b_ub, a_eq, b_eq, bounds)
        if lo.status != "optimal":
            out.append(None)
            continue
        hi = solve_lp(-c, a_ub, b_ub, a_eq, b_eq, bounds)
        out.append((lo.value, -hi.value))
    return out


def sweep(spec: FtocpSpec | Callable[[np.ndarray], bool], grid: GridSpec, method: str = "auto") -> RoaResult:
    """Feasibility mask over ``grid``.

    ``spec`` may also be a plain predicate on ``x0``, in which case the
    pointwise method is used.
    """
    axes = grid.axes
    dim = len(axes)
    if method == "auto":
        method = "rows" if dim == 2 and isinstance(spec, FtocpSpec) else "points"
    if method == "rows":
        if dim != 2 or not isinstance(spec, FtocpSpec):
            raise ValueError("the row method needs a 2-D FtocpSpec")
        mask = np.zeros(grid.resolution, dtype=bool)
        tol = ROW_TOL * max(1.0, float(np.abs(axes[0]).max()))
        for i2, ends in enumerate(row_intervals(spec, (axes[0][0], axes[0][-1]), axes[1])):
            if ends is not None:
                mask[:, i2] = (axes[0] >= ends[0] - tol) & (axes[0] <= ends[1] + tol)
    elif method == "points":
        test = (lambda x: is_feasible(spec, x)) if isinstance(spec, FtocpSpec) else spec
        mask = np.zeros(grid.resolution, dtype=bool)
        for idx in np.ndindex(*grid.resolution):
            mask[idx] = test(np.array([axes[d][i] for d, i in enumerate(idx)]))
    else:
        raise ValueError(f"unknown sweep method {method!r}")
    return _result(grid, mask)


def _result(grid: GridSpec, mask: np.ndarray) -> RoaResult:
    res = RoaResult(grid, mask, 0.0, None)
    if len(grid.resolution) == 2:
        # the hull of grid points only needs the two ends of each grid column
        axes = grid.axes
        ends = []
        for i2 in np.flatnonzero(mask.any(axis=0)):
            idx = np.flatnonzero(mask[:, i2])
            ends.extend([(axes[0][idx[0]], axes[1][i2]), (axes[0][idx[-1]], axes[1][i2])])
        pts = np.array(ends).reshape(-1, 2)
        if pts.shape[0] >= 3:
            hull = convex_hull(pts)
            if hull.shape[0] >= 3:
                res.hull_vertices = PolytopeV(hull)
        res.area = area(res, "cells")
    return res


def area(result: RoaResult, method: str = "cells") -> float:
    if len(result.grid_spec.resolution) != 2:
        raise ValueError("areas are defined for 2-D grids only")
    if method == "cells":
        return result.count * result.grid_spec.cell_area
    if method == "hull":
        if result.hull_vertices is None:
            return 0.0
        return polygon_area(result.hull_vertices.vertices)
    raise ValueError(f"unknown area method {method!r}")


def robust_sweep(model: LpvModel, cost: StageCost, n_list, grid: GridSpec,
                 cfg: ControllerConfig = ControllerConfig()) -> dict[int, RoaResult]:
    d_set = build_additive_set(model, "robust")
    return {n: sweep(robust_problem(model, cost, n, cfg, d_set).spec, grid) for n in n_list}


def lpv_sweep(model: LpvModel, theta_path, cost: StageCost, n_list, grid: GridSpec,
              cfg: ControllerConfig = ControllerConfig()) -> dict[int, RoaResult]:
    """RoAs for one nominal path; ``theta_path[0]`` is the measured parameter."""
    d_set = build_additive_set(model, "lpv")
    return {n: sweep(lpv_problem(model, theta_path, cost, n, cfg, d_set).spec, grid) for n in n_list}


@dataclass
class RincTable:
    delta_max: float
    per_n: dict
    r_inc: dict  # N -> (mean percent increase from N to the next horizon, std)
    realizations: int
    resampled: int = 0
    areas: np.ndarray | None = field(default=None, repr=False)  # realizations x len(n_list)
    n_list: tuple = ()

    def to_json(self) -> dict:
        return {
            "delta_max": self.delta_max,
            "realizations": self.realizations,
            "resampled": self.resampled,
            "n_list": list(self.n_list),
            "per_n": {str(k): v for k, v in self.per_n.items()},
            "r_inc": {str(k): {"mean": v[0], "std": v[1], "to": self.n_list[self.n_list.index(k) + 1]}
                      for k, v in self.r_inc.items()},
            "areas": None if self.areas is None else self.areas.tolist(),
        }

    def write_json(self, path, header: dict | None = None) -> None:
        data = self.to_json()
        if header:
            data = {"header": header, **data}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=1)


def summarize(areas: np.ndarray, n_list: Sequence[int], delta_max: float, resampled: int = 0) -> RincTable:
    areas = np.asarray(areas, dtype=float)
    per_n = {}
    for j, n in enumerate(n_list):
        col = areas[:, j]
        mean = float(col.mean())
        per_n[n] = {
            "mean_area": mean,
            "min_area": float(col.min()),
            "max_area": float(col.max()),
            "r_avmin": mean / float(col.min()) if col.min() > 0 else float("inf"),
            "r_avmax": mean / float(col.max()) if col.max() > 0 else 0.0,
        }
    r_inc = {}
    for j in range(len(n_list) - 1):
        inc = 100.0 * (areas[:, j + 1] - areas[:, j]) / areas[:, j]
        std = float(inc.std(ddof=1)) if len(inc) > 1 else 0.0
        r_inc[n_list[j]] = (float(inc.mean()), std)
    return RincTable(float(delta_max), per_n, r_inc, areas.shape[0], resampled, areas, tuple(n_list))


def rinc_experiment(
    model: LpvModel,
    cost: StageCost,
    deadbeat_m: int | None,
    n_list: Sequence[int],
    delta_max: float,
    realizations: int,
    seed,
    grid: GridSpec | None = None,
    cfg: ControllerConfig | None = None,
    max_resample: int = 100,
) -> RincTable:
    """RoA statistics over random nominal paths.

    ``model.theta_delta_set`` is the per-step uncertainty box; each path has
    ``max(n_list) + 1`` points (the measured parameter plus one per step).
    """
    if realizations < 2:
        raise ValueError("need at least two realizations")
    n_list = list(n_list)
    if n_list != sorted(n_list):
        raise ValueError("n_list must be ascending")
    cfg = cfg or ControllerConfig(deadbeat_m=deadbeat_m)
    grid = grid or GridSpec.over(model.x_set)
    rng = np.random.default_rng(seed)
    length = max(n_list) + 1
    areas, resampled = [], 0
    while len(areas) < realizations:
        path = sample_parameter_path(model.theta_set, delta_max, length, rng.integers(2**63),
                                     model.theta_delta_set)
        try:
            sweeps = lpv_sweep(model, path, cost, n_list, grid, cfg)
        except (ScheduleError, TighteningInfeasibleError):
            resampled += 1
            if resampled > max_resample:
                raise
            continue
        areas.append([sweeps[n].area for n in n_list])
    return summarize(np.array(areas), n_list, delta_max, resampled)
