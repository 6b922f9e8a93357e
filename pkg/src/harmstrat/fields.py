"""Lattice domains, analytic example maps and discretized map fields.

A :class:`DomainGrid` is the set of lattice points of spacing ``h`` inside a
closed ball.  Nodes are addressed by their position in C order inside the
bounding box, so coordinates are reproducible bit for bit from
``(center, radius, spacing)``.

A :class:`MapField` carries one target point per node.  Analytic fields keep
their formula and can be evaluated anywhere; solved fields are evaluated off
the nodes by multilinear geodesic interpolation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from .targets import (
    CONE,
    ConicalTarget,
    PointArray,
    TargetPoint,
    distances,
    geodesics,
    sq_distances,
)

_SNAP = 1e-9


@dataclass(frozen=True)
class DomainGrid:
    """Lattice nodes of spacing ``spacing`` in the closed ball B_radius(center)."""

    dim: int
    center: tuple
    radius: float
    spacing: float

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"grids are supported in dimension 2 or 3, got {self.dim}")
        c = tuple(float(v) for v in self.center)
        if len(c) != self.dim:
            raise ValueError("center has the wrong dimension")
        object.__setattr__(self, "center", c)
        if not (self.radius > 0 and self.spacing > 0):
            raise ValueError("radius and spacing must be positive")
        if self.spacing > self.radius / 8 * (1 + 1e-12):
            raise ValueError(
                f"spacing {self.spacing} exceeds radius/8 = {self.radius / 8}; ball is under-resolved"
            )

    @property
    def half_width(self) -> int:
        return int(math.floor(self.radius / self.spacing + _SNAP))

    @property
    def box_shape(self) -> tuple:
        return (2 * self.half_width + 1,) * self.dim

    @property
    def origin(self) -> np.ndarray:
        """Coordinates of box index (0, ..., 0)."""
        return np.asarray(self.center) - self.spacing * self.half_width

    @cached_property
    def box_offsets(self) -> np.ndarray:
        K = self.half_width
        axes = [np.arange(-K, K + 1)] * self.dim
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @cached_property
    def mask(self) -> np.ndarray:
        """Box-shaped boolean mask of lattice points inside the ball."""
        off = self.box_offsets * self.spacing
        return np.sqrt((off * off).sum(-1)) <= self.radius * (1 + 1e-12)

    @cached_property
    def box_index(self) -> np.ndarray:
        """(N, dim) integer box indices of the nodes, in node order."""
        return np.argwhere(self.mask)

    @cached_property
    def node_of_box(self) -> np.ndarray:
        """Box-shaped array mapping box positions to node ids (-1 outside)."""
        ids = np.full(self.box_shape, -1, dtype=np.int64)
        ids[self.mask] = np.arange(int(self.mask.sum()))
        return ids

    @property
    def n_nodes(self) -> int:
        return self.box_index.shape[0]

    @cached_property
    def coords(self) -> np.ndarray:
        return self.origin + self.spacing * self.box_index

    @cached_property
    def center_distance(self) -> np.ndarray:
        off = (self.box_index - self.half_width) * self.spacing
        return np.sqrt((off * off).sum(-1))

    @cached_property
    def boundary(self) -> np.ndarray:
        """Nodes whose distance to the sphere of radius R is below h."""
        return self.radius - self.center_distance < self.spacing * (1 - 1e-12)

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary

    def node_at(self, point) -> int:
        """Node id at a lattice point (raises if the point is not a node)."""
        ids = self.lookup(np.atleast_2d(point))
        if ids[0] < 0:
            raise ValueError(f"{point} is not a node of the grid")
        return int(ids[0])

    def lookup(self, points: np.ndarray) -> np.ndarray:
        """Node ids of lattice-aligned points; -1 where absent."""
        t = (np.asarray(points, float) - self.origin) / self.spacing
        idx = np.rint(t).astype(np.int64)
        ok = np.all(np.abs(t - idx) < 1e-6, axis=-1)
        ok &= np.all((idx >= 0) & (idx < self.box_shape[0]), axis=-1)
        out = np.full(idx.shape[:-1], -1, dtype=np.int64)
        sel = idx[ok]
        out[ok] = self.node_of_box[tuple(sel.T)]
        return out

    def contains_ball(self, x, r, margin=0.0) -> bool:
        d = float(np.linalg.norm(np.asarray(x, float) - np.asarray(self.center)))
        return d + r + margin <= self.radius * (1 + 1e-12)

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "center": list(self.center),
            "radius": self.radius,
            "spacing": self.spacing,
        }

    @classmethod
    def from_json(cls, d) -> "DomainGrid":
        return cls(int(d["dim"]), tuple(d["center"]), float(d["radius"]), float(d["spacing"]))


# -- analytic example maps ------------------------------------------------------

def pod_map(z: np.ndarray, ray_count: int = 3) -> PointArray:
    """The m-pod analogue of Re z^(m/2) on the plane.

    radial = |z|^(m/2) |cos(m theta / 2)|; the ray is the index of the sector
    of angular width 2 pi / m containing arg z, numbered so that the sector
    around theta = 0 is ray 1 and indices increase counterclockwise.  Sector
    boundaries (where the cosine vanishes) map to the cone point.
    """
    z = np.asarray(z, dtype=float)
    m = ray_count
    x, y = z[..., 0], z[..., 1]
    rho = np.hypot(x, y)
    theta = np.arctan2(y, x)
    radial = rho ** (m / 2.0) * np.abs(np.cos(m * theta / 2.0))
    sector = np.rint(m * theta / (2 * np.pi)).astype(np.int64)
    ray = np.mod(sector + 1, m)
    radial = np.where(radial > 0, radial, 0.0)
    ray = np.where(radial > 0, ray, CONE)
    return PointArray(np.zeros(rho.shape + (0,)), ray, radial)


def tripod_map(z: np.ndarray) -> PointArray:
    return pod_map(z, 3)


def eval_tripod(z) -> TargetPoint:
    """The tripod map at a single point of the plane."""
    return tripod_map(np.asarray(z, float).reshape(1, 2)).point(0)


def eval_product(t: float, z) -> TargetPoint:
    """The map (t, z) -> (t, f_Y(z)) into R x Pod_3."""
    p = eval_tripod(z)
    return TargetPoint((float(t),), p.ray, p.radial)


def harmonic_quadratic(x: np.ndarray) -> np.ndarray:
    """g(x) = x1^2 - x2^2, a degree-2 harmonic polynomial on R^4."""
    x = np.asarray(x, float)
    return x[..., 0] ** 2 - x[..., 1] ** 2


def eval_example3(x, z) -> TargetPoint:
    """The map (x, z) -> (g(x), f_K(z)) into R x Pod_5 with x in R^4."""
    x = np.asarray(x, float).reshape(1, 4)
    p = pod_map(np.asarray(z, float).reshape(1, 2), 5).point(0)
    return TargetPoint((float(harmonic_quadratic(x)[0]),), p.ray, p.radial)


@dataclass(frozen=True)
class AnalyticMap:
    """A closed-form map from R^dim into a conical target."""

    name: str
    dim: int
    target: ConicalTarget
    func: Callable[[np.ndarray], PointArray]

    def at(self, points) -> PointArray:
        pts = np.asarray(points, dtype=float)
        flat_pts = pts.reshape(-1, self.dim)
        out = self.func(flat_pts)
        return out.reshape(pts.shape[:-1])


def _tripod(p):
    return tripod_map(p)


def _product(p):
    pod = tripod_map(p[:, 1:3])
    return PointArray(p[:, :1].copy(), pod.ray, pod.radial)


def _product_factor(p):
    return tripod_map(p[:, 1:3])


def _example3(p):
    pod = pod_map(p[:, 4:6], 5)
    return PointArray(harmonic_quadratic(p[:, :4])[:, None], pod.ray, pod.radial)


def _linear(p):
    return PointArray(p[:, :1].copy(), np.full(p.shape[0], CONE), np.zeros(p.shape[0]))


def _constant(p):
    return PointArray(np.ones((p.shape[0], 1)), np.full(p.shape[0], CONE), np.zeros(p.shape[0]))


def example_map(name: str, dim: Optional[int] = None) -> AnalyticMap:
    """Named analytic maps.

    ``tripod``          f_Y on R^2 into Pod_3
    ``product``         (t, z) -> (t, f_Y(z)) on R^3 into R x Pod_3
    ``product_factor``  (t, z) -> f_Y(z) on R^3 into Pod_3
    ``example3``        (x, z) -> (g(x), f_K(z)) on R^6 into R x Pod_5
    ``linear``          x -> x_1 on R^dim into R
    ``constant``        x -> 1 on R^dim into R
    """
    if name == "tripod":
        return AnalyticMap(name, 2, ConicalTarget(0, 3), _tripod)
    if name == "product":
        return AnalyticMap(name, 3, ConicalTarget(1, 3), _product)
    if name == "product_factor":
        return AnalyticMap(name, 3, ConicalTarget(0, 3), _product_factor)
    if name == "example3":
        return AnalyticMap(name, 6, ConicalTarget(1, 5), _example3)
    if name == "linear":
        return AnalyticMap(name, dim or 2, ConicalTarget(1, 0), _linear)
    if name == "constant":
        return AnalyticMap(name, dim or 2, ConicalTarget(1, 0), _constant)
    raise ValueError(f"unknown example map {name!r}")


EXAMPLES = ("tripod", "product", "product_factor", "example3", "linear", "constant")


# -- fields ----------------------------------------------------------------------

class MapField:
    """A map from the nodes of a :class:`DomainGrid` into a conical target.

    Parameters
    ----------
    grid : DomainGrid
    target : ConicalTarget
    values : PointArray
        One value per node, in node order.
    provenance : {"analytic", "solved"}
    analytic : AnalyticMap, optional
        Formula for analytic fields; enables evaluation anywhere.
    """

    def __init__(self, grid: DomainGrid, target: ConicalTarget, values: PointArray,
                 provenance: str = "solved", analytic: Optional[AnalyticMap] = None):
        if provenance not in ("analytic", "solved"):
            raise ValueError("provenance must be 'analytic' or 'solved'")
        if provenance == "analytic" and analytic is None:
            raise ValueError("analytic fields need their formula")
        if values.shape != (grid.n_nodes,):
            raise ValueError("need exactly one value per node")
        target.validate_array(values)
        self.grid = grid
        self.target = target
        self.values = values
        self.provenance = provenance
        self.analytic = analytic
        self._box = None
        self._density = None
        self._singular = None

    @classmethod
    def from_analytic(cls, grid: DomainGrid, amap: AnalyticMap) -> "MapField":
        if amap.dim != grid.dim:
            raise ValueError("map and grid dimensions differ")
        return cls(grid, amap.target, amap.at(grid.coords), "analytic", amap)

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def spacing(self) -> float:
        return self.grid.spacing

    @property
    def is_analytic(self) -> bool:
        return self.provenance == "analytic"

    def cone_distance(self) -> np.ndarray:
        """Distance of every node value to the cone point."""
        flat2 = (self.values.flat ** 2).sum(-1)
        return np.sqrt(flat2 + self.values.radial ** 2)

    # box-shaped copy of the values, filled outside the ball by nearest nodes,
    # used by multilinear interpolation
    def _filled_box(self):
        if self._box is None:
            g = self.grid
            _, idx = ndimage.distance_transform_edt(~g.mask, return_indices=True)
            near = g.node_of_box[tuple(idx)]
            self._box = self.values[near.reshape(-1)].reshape(g.box_shape)
        return self._box

    def at(self, points) -> PointArray:
        """Evaluate the field at arbitrary points of the closed ball."""
        pts = np.asarray(points, dtype=float)
        if self.is_analytic:
            return self.analytic.at(pts)
        flat_pts = pts.reshape(-1, self.dim)
        g = self.grid
        rel = flat_pts - np.asarray(g.center)
        if flat_pts.size and np.sqrt((rel * rel).sum(-1)).max() > g.radius * (1 + 1e-9):
            raise ValueError("evaluation point outside the grid ball")
        ids = g.lookup(flat_pts)
        if np.all(ids >= 0):
            return self.values[ids].reshape(pts.shape[:-1])
        return self._interpolate(flat_pts).reshape(pts.shape[:-1])

    def _interpolate(self, pts: np.ndarray) -> PointArray:
        g = self.grid
        box = self._filled_box()
        t = (pts - g.origin) / g.spacing
        top = g.box_shape[0] - 1
        i0 = np.floor(t + _SNAP).astype(np.int64)
        i0 = np.clip(i0, 0, top - 1)
        frac = np.clip(t - i0, 0.0, 1.0)
        frac = np.where(frac < _SNAP, 0.0, frac)
        frac = np.where(frac > 1 - _SNAP, 1.0, frac)
        # corners ordered with the first axis varying slowest; collapse the
        # last axis first, then the remaining ones
        n = self.dim
        corners = []
        for bits in np.ndindex(*(2,) * n):
            idx = tuple(i0[:, a] + bits[a] for a in range(n))
            corners.append(box[idx])
        for axis in range(n - 1, -1, -1):
            lam = frac[:, axis]
            corners = [geodesics(corners[2 * i], corners[2 * i + 1], lam)
                       for i in range(len(corners) // 2)]
        return corners[0]

    def density_at(self, points: np.ndarray, step: float) -> np.ndarray:
        """Energy density by central metric difference quotients at ``points``."""
        pts = np.asarray(points, float)
        g = self.grid
        if not self.is_analytic and abs(step - g.spacing) < 1e-12 * g.spacing:
            ids = g.lookup(pts.reshape(-1, self.dim))
            if np.all(ids >= 0):
                dens = self.node_density()[ids]
                if np.any(np.isnan(dens)):
                    raise ValueError("energy density requested on boundary nodes")
                return dens.reshape(pts.shape[:-1])
        return _difference_density(self.at, pts, step, self.dim)

    def node_density(self) -> np.ndarray:
        """Energy density at every node (NaN where an axis neighbor is missing)."""
        if self._density is None:
            g = self.grid
            if self.is_analytic:
                self._density = _difference_density(self.at, g.coords, g.spacing, self.dim)
            else:
                dens = np.zeros(g.n_nodes)
                ok = np.ones(g.n_nodes, bool)
                for a in range(self.dim):
                    e = np.zeros(self.dim, dtype=np.int64)
                    e[a] = 1
                    plus = _neighbor_ids(g, e)
                    minus = _neighbor_ids(g, -e)
                    good = (plus >= 0) & (minus >= 0)
                    ok &= good
                    d2 = np.zeros(g.n_nodes)
                    d2[good] = sq_distances(self.values[plus[good]], self.values[minus[good]])
                    dens += d2
                dens /= (2 * g.spacing) ** 2
                dens[~ok | g.boundary] = np.nan
                self._density = dens
        return self._density

    def singular_nodes(self):
        from .strata import detect_singular

        if self._singular is None:
            self._singular = detect_singular(self)
        return self._singular

    # -- serialization ------------------------------------------------------
    def to_jsonl(self, path, header: Optional[dict] = None) -> None:
        head = {"grid": self.grid.to_json(), "target": self.target.to_json(),
                "provenance": self.provenance}
        if self.analytic is not None:
            head["example"] = self.analytic.name
        if header:
            head.update(header)
        with open(path, "w") as fh:
            fh.write(json.dumps({"header": head}, sort_keys=True) + "\n")
            v = self.values
            for i in range(self.grid.n_nodes):
                ray = int(v.ray[i])
                rec = {"index": i, "flat": [float(a) for a in v.flat[i]],
                       "ray": None if ray < 0 else ray, "radial": float(v.radial[i])}
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "MapField":
        with open(path) as fh:
            head = json.loads(fh.readline())["header"]
            recs = [json.loads(line) for line in fh if line.strip()]
        grid = DomainGrid.from_json(head["grid"])
        target = ConicalTarget.from_json(head["target"])
        recs.sort(key=lambda r: r["index"])
        flat = np.array([r["flat"] for r in recs], float).reshape(len(recs), target.flat_dim)
        ray = np.array([-1 if r["ray"] is None else r["ray"] for r in recs])
        radial = np.array([r["radial"] for r in recs], float)
        values = PointArray(flat, ray, radial)
        if head.get("provenance") == "analytic" and "example" in head:
            amap = example_map(head["example"], grid.dim)
            return cls(grid, target, values, "analytic", amap)
        return cls(grid, target, values, "solved")


def _neighbor_ids(grid: DomainGrid, offset) -> np.ndarray:
    idx = grid.box_index + np.asarray(offset)
    top = grid.box_shape[0]
    ok = np.all((idx >= 0) & (idx < top), axis=1)
    out = np.full(grid.n_nodes, -1, dtype=np.int64)
    out[ok] = grid.node_of_box[tuple(idx[ok].T)]
    return out


def _difference_density(evaluate, pts, step, dim):
    dens = np.zeros(pts.shape[:-1])
    for a in range(dim):
        e = np.zeros(dim)
        e[a] = step
        dens = dens + sq_distances(evaluate(pts + e), evaluate(pts - e))
    return dens / (2 * step) ** 2


def energy_density(f: MapField, node: int) -> float:
    """Squared metric gradient at a node from central difference quotients."""
    if not f.is_analytic and f.grid.boundary[node]:
        raise ValueError(f"node {node} is a boundary node")
    return float(f.node_density()[node])


def total_energy(f: MapField) -> float:
    """Quadrature of the energy density over the nodes where it is defined."""
    dens = f.node_density()
    return float(np.nansum(dens) * f.spacing ** f.dim)


def boundary_trace(f: MapField):
    """Boundary node ids (ascending) and their values."""
    ids = np.flatnonzero(f.grid.boundary)
    return ids, f.values[ids]


def write_density_csv(f: MapField, path, header: Optional[str] = None) -> None:
    dens = f.node_density()
    cols = [f"x{i + 1}" for i in range(f.dim)] + ["density"]
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write(",".join(["index"] + cols) + "\n")
        for i in range(f.grid.n_nodes):
            d = dens[i]
            coords = ",".join(repr(float(c)) for c in f.grid.coords[i])
            fh.write(f"{i},{coords},{'' if np.isnan(d) else repr(float(d))}\n")


def sup_distance(a: PointArray, b: PointArray) -> float:
    return float(distances(a, b).max()) if len(a) else 0.0
