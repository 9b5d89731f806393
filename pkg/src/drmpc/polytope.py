"""Set algebra on compact convex polytopes in low dimension.

Two representations are used side by side:

* :class:`PolytopeH` -- ``{x : normals @ x <= offsets}``, used for constraint
  sets and everything that gets tightened.
* :class:`PolytopeV` -- a vertex list, used for disturbance-like sets that get
  mapped, summed and subtracted.

Pontryagin differences are always ``H ominus V`` and are computed by shrinking
offsets with support functions, so tightened sets keep the normals of the set
they came from.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from drmpc._lp import phase_one, solve_lp

MEMBERSHIP_TOL = 1e-9
DEDUP_RTOL = 1e-8
EMPTY_TOL = 1e-9


class PolytopeError(ValueError):
    """Structural problem with a polytope (empty, unbounded, bad shape)."""


class DimensionError(PolytopeError):
    pass


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=4096)
def _recession_cone_trivial(shape: tuple[int, int], raw: bytes) -> bool:
    # {d : A d <= 0} == {0}  <=>  max(+-e_i . d) over the cone is 0 for every i
    normals = np.frombuffer(raw, dtype=float).reshape(shape)
    n = shape[1]
    box = [(-1.0, 1.0)] * n
    for i in range(n):
        for sign in (1.0, -1.0):
            c = np.zeros(n)
            c[i] = -sign
            res = solve_lp(c, normals, np.zeros(shape[0]), bounds=box)
            if res.status != "optimal" or -res.value > 1e-9:
                return False
    return True


@dataclass(frozen=True, eq=False)
class PolytopeH:
    """Halfspace representation ``{x : normals @ x <= offsets}``.

    Construction rejects non-finite data, zero rows and unbounded sets.
    Boundedness only depends on the normals, so it is cached per normal matrix.
    """

    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        normals = _frozen(np.atleast_2d(self.normals))
        offsets = _frozen(np.ravel(self.offsets))
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)
        if normals.shape[0] != offsets.shape[0]:
            raise PolytopeError(
                f"{normals.shape[0]} normals but {offsets.shape[0]} offsets"
            )
        if not (np.all(np.isfinite(normals)) and np.all(np.isfinite(offsets))):
            raise PolytopeError("non-finite entries in halfspace data")
        if normals.shape[0] == 0 or np.any(np.all(normals == 0.0, axis=1)):
            raise PolytopeError("halfspace normals must be nonzero rows")
        if not _recession_cone_trivial(normals.shape, normals.tobytes()):
            raise PolytopeError("halfspace representation is unbounded")

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @classmethod
    def box(cls, lower, upper) -> "PolytopeH":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        eye = np.eye(lower.size)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))

    def with_offsets(self, offsets) -> "PolytopeH":
        """Same normals, new offsets. Skips the boundedness LP."""
        new = object.__new__(PolytopeH)
        object.__setattr__(new, "normals", self.normals)
        object.__setattr__(new, "offsets", _frozen(np.ravel(offsets)))
        if new.offsets.shape != self.offsets.shape or not np.all(np.isfinite(new.offsets)):
            raise PolytopeError("offsets must be finite and match the normals")
        return new

    def to_json(self) -> dict:
        return {"normals": self.normals.tolist(), "offsets": self.offsets.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "PolytopeH":
        return cls(np.array(data["normals"], dtype=float), np.array(data["offsets"], dtype=float))

    def __repr__(self) -> str:
        return f"PolytopeH(dim={self.dim}, rows={self.normals.shape[0]})"


@dataclass(frozen=True, eq=False)
class PolytopeV:
    """Vertex representation. Canonicalized to hull vertices for dim <= 3."""

    vertices: np.ndarray

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=float)
        if verts.ndim == 1:
            verts = verts.reshape(1, -1)
        if verts.ndim != 2 or verts.shape[0] == 0:
            raise PolytopeError("a V-polytope needs at least one vertex")
        if not np.all(np.isfinite(verts)):
            raise PolytopeError("non-finite vertex coordinates")
        object.__setattr__(self, "vertices", _frozen(convex_hull(verts)))

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @classmethod
    def point(cls, x) -> "PolytopeV":
        return cls(np.atleast_2d(np.asarray(x, dtype=float)))

    @classmethod
    def origin(cls, n: int) -> "PolytopeV":
        return cls(np.zeros((1, n)))

    def to_json(self) -> dict:
        return {"vertices": self.vertices.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "PolytopeV":
        return cls(np.array(data["vertices"], dtype=float))

    def __repr__(self) -> str:
        return f"PolytopeV(dim={self.dim}, vertices={self.vertices.shape[0]})"


def polytope_from_json(data: dict) -> PolytopeH | PolytopeV:
    if "vertices" in data:
        return PolytopeV.from_json(data)
    return PolytopeH.from_json(data)


# --------------------------------------------------------------------------
# convex hulls


def _dedup(points: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(points))))
    tol = DEDUP_RTOL * scale
    keep = np.empty_like(points)
    count = 0
    for p in points:
        if count == 0 or np.min(np.max(np.abs(keep[:count] - p), axis=1)) > tol:
            keep[count] = p
            count += 1
    return keep[:count].copy()


def _hull_2d(points: np.ndarray) -> np.ndarray:
    # Andrew's monotone chain; returns counter-clockwise vertices, collinear points dropped.
    # The turn test is exact: a tolerance here can discard true extreme points of thin sets.
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0.0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0.0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if not hull:
        hull = [pts[0]]
    return np.array(hull)


def _hull_3d(points: np.ndarray) -> np.ndarray:
    from scipy.spatial import ConvexHull, QhullError

    if points.shape[0] <= 4:
        return points
    try:
        hull = ConvexHull(points)
    except QhullError:
        # flat point cloud: keep everything, support functions stay exact
        return points
    return points[np.sort(hull.vertices)]


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Vertices of the convex hull of ``points`` (exact for dimension <= 3)."""
    points = _dedup(np.asarray(points, dtype=float))
    n = points.shape[1]
    if points.shape[0] == 1:
        return points
    if n == 1:
        return np.array([[points.min()], [points.max()]]) if points.min() < points.max() else points[:1]
    if n == 2:
        return _hull_2d(points)
    if n == 3:
        return _hull_3d(points)
    return points


# --------------------------------------------------------------------------
# operations


def _check_dims(n1: int, n2: int, what: str) -> None:
    if n1 != n2:
        raise DimensionError(f"{what}: dimension mismatch ({n1} vs {n2})")


def support(p: PolytopeV, a) -> float:
    """Support function ``max_{v in p} a . v``."""
    a = np.asarray(a, dtype=float).ravel()
    _check_dims(p.dim, a.size, "support")
    return float(np.max(p.vertices @ a))


def support_many(p: PolytopeV, directions: np.ndarray) -> np.ndarray:
    """Support function for every row of ``directions``."""
    return np.max(p.vertices @ np.atleast_2d(directions).T, axis=0)


def minkowski_sum(p: PolytopeV, q: PolytopeV) -> PolytopeV:
    _check_dims(p.dim, q.dim, "minkowski_sum")
    sums = (p.vertices[:, None, :] + q.vertices[None, :, :]).reshape(-1, p.dim)
    return PolytopeV(sums)


def pontryagin_diff(p: PolytopeH, q: PolytopeV) -> PolytopeH:
    """``{x : x + q in p for all q in q}`` by offset tightening.

    The result may be empty; use :func:`is_empty` to check.
    """
    _check_dims(p.dim, q.dim, "pontryagin_diff")
    return p.with_offsets(p.offsets - support_many(q, p.normals))


def linear_image(m, p: PolytopeV) -> PolytopeV:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    _check_dims(m.shape[1], p.dim, "linear_image")
    return PolytopeV(p.vertices @ m.T)


def contains(p: PolytopeH, x, tol: float = MEMBERSHIP_TOL) -> bool:
    x = np.asarray(x, dtype=float).ravel()
    _check_dims(p.dim, x.size, "contains")
    return bool(np.all(p.normals @ x <= p.offsets + tol))


def contains_points(p: PolytopeH, xs: np.ndarray, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
    """Vectorized membership for the rows of ``xs``."""
    xs = np.atleast_2d(xs)
    return np.all(xs @ p.normals.T <= p.offsets + tol, axis=1)


def is_empty(p: PolytopeH) -> bool:
    if np.all(p.offsets >= 0.0):
        return False  # origin is a witness
    return phase_one(p.normals, p.offsets, tol=EMPTY_TOL) is None


def vertices_of(p: PolytopeH, tol: float = MEMBERSHIP_TOL) -> PolytopeV:
    """Exact vertex enumeration by facet intersections (dimension <= 3)."""
    n = p.dim
    if n > 3:
        raise PolytopeError(f"vertex enumeration is only supported up to dimension 3, got {n}")
    a, b = p.normals, p.offsets
    scale = max(1.0, float(np.max(np.abs(b))))
    found = []
    for rows in itertools.combinations(range(a.shape[0]), n):
        sub = a[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12 * max(1.0, np.max(np.abs(sub))) ** n:
            continue
        x = np.linalg.solve(sub, b[list(rows)])
        if np.all(a @ x <= b + tol * scale):
            found.append(x)
    if not found:
        raise PolytopeError("polytope is empty (no feasible vertex)")
    return PolytopeV(np.array(found))


def halfspaces_of(p: PolytopeV) -> PolytopeH:
    """Facet description of a full-dimensional V-polytope in 1-D or 2-D."""
    v = p.vertices
    if p.dim == 1:
        return PolytopeH(np.array([[1.0], [-1.0]]), np.array([v.max(), -v.min()]))
    if p.dim != 2 or v.shape[0] < 3:
        raise PolytopeError("halfspaces_of needs a full-dimensional 1-D or 2-D polytope")
    normals = []
    offsets = []
    for i in range(v.shape[0]):
        e = v[(i + 1) % v.shape[0]] - v[i]
        nrm = np.array([e[1], -e[0]])  # outward for counter-clockwise order
        nrm /= np.linalg.norm(nrm)
        normals.append(nrm)
        offsets.append(nrm @ v[i])
    return PolytopeH(np.array(normals), np.array(offsets))


def polygon_area(vertices: np.ndarray) -> float:
    """Shoelace area of an ordered polygon (0 for fewer than 3 points)."""
    v = np.asarray(vertices, dtype=float)
    if v.shape[0] < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def normalized(p: PolytopeH) -> PolytopeH:
    """Rows scaled to unit Euclidean norm."""
    norms = np.linalg.norm(p.normals, axis=1)
    return PolytopeH(p.normals / norms[:, None], p.offsets / norms)


def bounding_box(p: PolytopeH) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned bounds via one LP per direction."""
    lo = np.empty(p.dim)
    hi = np.empty(p.dim)
    for i in range(p.dim):
        c = np.zeros(p.dim)
        c[i] = 1.0
        res_lo = solve_lp(c, p.normals, p.offsets)
        res_hi = solve_lp(-c, p.normals, p.offsets)
        if res_lo.status != "optimal" or res_hi.status != "optimal":
            raise PolytopeError("bounding box of an empty polytope")
        lo[i] = res_lo.value
        hi[i] = -res_hi.value
    return lo, hi


def sample_in(p: PolytopeH, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples by rejection from the bounding box."""
    lo, hi = bounding_box(p)
    out: list[np.ndarray] = []
    while len(out) < count:
        cand = rng.uniform(lo, hi, size=(max(16, 2 * count), p.dim))
        out.extend(cand[contains_points(p, cand, tol=0.0)])
    return np.array(out[:count])


def as_vertices(p: PolytopeH | PolytopeV) -> PolytopeV:
    return p if isinstance(p, PolytopeV) else vertices_of(p)


__all__: Sequence[str] = [
    "PolytopeH",
    "PolytopeV",
    "PolytopeError",
    "DimensionError",
    "support",
    "support_many",
    "minkowski_sum",
    "pontryagin_diff",
    "linear_image",
    "contains",
    "contains_points",
    "is_empty",
    "vertices_of",
    "halfspaces_of",
    "polygon_area",
    "normalized",
    "bounding_box",
    "sample_in",
    "as_vertices",
    "convex_hull",
    "polytope_from_json",
]
