"""Singular set detection, splitting data and quantitative strata."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .fields import AnalyticMap, MapField
from .frequency import smoothed_order_value
from .homogeneity import homogeneity_test, cone_tolerance
from .targets import PointArray, norms, sq_distances

SPLIT_TOL = 1e-3


# -- singular set -------------------------------------------------------------

def _ball_footprint(radius_units: int, dim: int) -> np.ndarray:
    ax = np.arange(-radius_units, radius_units + 1)
    mesh = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), -1)
    return (mesh ** 2).sum(-1) <= radius_units ** 2


def rays_touched(f: MapField, radius_units: int, tol: float = 0.0) -> np.ndarray:
    """Number of distinct rays met (with radial > tol) in B_{radius_units h} of each node."""
    g = f.grid
    m = f.target.ray_count
    count = np.zeros(g.n_nodes, dtype=np.int64)
    if m == 0:
        return count
    foot = _ball_footprint(radius_units, g.dim)
    ids = g.box_index
    for ell in range(m):
        box = np.zeros(g.box_shape, bool)
        on = (f.values.ray == ell) & (f.values.radial > tol)
        box[tuple(ids[on].T)] = True
        grown = ndimage.binary_dilation(box, structure=foot)
        count += grown[tuple(ids.T)]
    return count


def detect_singular(f: MapField, tol: Optional[float] = None) -> np.ndarray:
    """Node ids whose image near the node meets at least three rays.

    Images meeting at most two rays lie in a flat (a line through the cone
    point times the flat factor), so a node is singular exactly when its
    image fails to be flat on both B_2h and B_4h.
    """
    if f.target.ray_count == 0:
        return np.zeros(0, dtype=np.int64)
    if tol is None:
        tol = 1e-12 * max(float(f.values.radial.max()), 1.0)
    sing = np.ones(f.grid.n_nodes, bool)
    for units in (2, 4):
        sing &= rays_touched(f, units, tol) >= 3
    return np.flatnonzero(sing)


# -- splitting ----------------------------------------------------------------

@dataclass
class SplittingData:
    x: tuple
    J: int
    sigma: float
    factor_frame: np.ndarray      # target flat axes carried by the split factor
    domain_frame: np.ndarray      # (J, n) domain directions the pod part ignores
    residual: float

    def to_json(self) -> dict:
        return {"x": list(self.x), "J": self.J, "sigma": self.sigma,
                "factor_frame": np.asarray(self.factor_frame).tolist(),
                "domain_frame": np.asarray(self.domain_frame).tolist(),
                "residual": self.residual}


def _pod_part(vals: PointArray) -> PointArray:
    return PointArray(np.zeros(vals.shape + (0,)), vals.ray, vals.radial)


def _split_at_radius(evaluate, target, x, sigma, samples: np.ndarray, eps: float, tol: float):
    """(J, residual, null basis, flat axes) for the split test on B_sigma(x)."""
    n = x.size
    pts = x + samples * sigma
    flat_grad = np.zeros((0, n))
    if target.flat_dim:
        cols = []
        for a in range(n):
            e = np.zeros(n)
            e[a] = eps
            cols.append((evaluate(pts + e).flat - evaluate(pts - e).flat) / (2 * eps))
        flat_grad = np.stack(cols, axis=-1).reshape(-1, n)  # (S * flat_dim, n)
    flat_size = float(np.linalg.norm(flat_grad))
    if target.flat_dim == 0 or flat_size < 1e-12:
        return 0, 0.0, np.zeros((0, n)), np.zeros(0, dtype=int)
    if not target.has_pod:
        rank = np.linalg.matrix_rank(flat_grad, tol=tol * flat_size)
        _, _, vt = np.linalg.svd(flat_grad)
        return int(rank), 0.0, vt[:rank], _flat_axes(flat_grad, pts.shape[0], target.flat_dim)

    def energy_along(v):
        step = eps * v
        a = _pod_part(evaluate(pts + step))
        b = _pod_part(evaluate(pts - step))
        return float(sq_distances(a, b).mean()) / (2 * eps) ** 2

    P = np.zeros((n, n))
    for a in range(n):
        P[a, a] = energy_along(np.eye(n)[a])
    for a in range(n):
        for b in range(a + 1, n):
            plus = energy_along(np.eye(n)[a] + np.eye(n)[b])
            minus = energy_along(np.eye(n)[a] - np.eye(n)[b])
            P[a, b] = P[b, a] = (plus - minus) / 4
    evals, evecs = np.linalg.eigh(P)
    trace = max(float(np.trace(P)), 1e-300)
    null = evals <= tol * trace
    basis = evecs[:, null].T
    pod_res = float(evals[null].max() / trace) if np.any(null) else 0.0
    if basis.shape[0] == 0:
        return 0, pod_res, basis, np.zeros(0, dtype=int)
    perp = evecs[:, ~null]
    leak = float(np.linalg.norm(flat_grad @ perp)) / flat_size if perp.size else 0.0
    if leak > tol:
        return 0, max(pod_res, leak), np.zeros((0, n)), np.zeros(0, dtype=int)
    return basis.shape[0], max(pod_res, leak), basis, _flat_axes(flat_grad, pts.shape[0], target.flat_dim)


def _flat_axes(flat_grad, n_samples, flat_dim):
    g = flat_grad.reshape(n_samples, flat_dim, -1)
    size = np.sqrt((g ** 2).sum(axis=(0, 2)))
    return np.flatnonzero(size > 1e-12 * max(size.max(), 1e-300))


def _unit_ball_samples(n, count, seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(count, n))
    z /= np.linalg.norm(z, axis=1)[:, None]
    return z * rng.uniform(0, 1, count)[:, None] ** (1 / n)


def splitting_data(f, x, radii: Optional[Sequence[float]] = None, tol: float = SPLIT_TOL,
                   samples: int = 400, seed: int = 0) -> SplittingData:
    """Largest j for which the field factors as (R^j part, pod part) near x.

    The pod part ignores a subspace N of domain directions when its
    directional energy form vanishes on N; the field splits with an R^j
    factor (j = dim N) when moreover the flat part varies only along N.
    ``f`` may be a ``MapField`` or an ``AnalyticMap`` (e.g. in dimension six).
    Sigma is the largest tested radius at which the smallest-radius value
    of J persists.
    """
    x = np.asarray(x, float)
    n = x.size
    target = f.target
    if isinstance(f, MapField):
        g = f.grid
        h = g.spacing
        if radii is None:
            reach = g.radius - float(np.linalg.norm(x - np.asarray(g.center)))
            radii = [2 * h * 2 ** i for i in range(32) if 2 * h * 2 ** i <= reach - 2 * h]
            if not radii:
                radii = [2 * h]
        eps = h / 2 if f.is_analytic else h
    else:
        if radii is None:
            radii = [0.25, 0.5, 1.0]
        eps = 1e-4
    radii = sorted(float(r) for r in radii)
    if target.flat_dim == 0:
        return SplittingData(tuple(x.tolist()), 0, radii[-1], np.zeros(0, dtype=int),
                             np.zeros((0, n)), 0.0)
    unit = _unit_ball_samples(n, samples, seed)
    results = [_split_at_radius(f.at, target, x, r, unit, eps, tol) for r in radii]
    J0 = results[0][0]
    sigma = radii[0]
    for r, res in zip(radii, results):
        if res[0] != J0:
            break
        sigma = r
    J, residual, basis, axes = results[0]
    return SplittingData(tuple(x.tolist()), int(J), float(sigma), axes, basis, float(residual))


# -- effective spanning -------------------------------------------------------

def _distance_to_span(p, base, dirs):
    v = p - base
    if dirs.shape[0]:
        q, _ = np.linalg.qr(dirs.T)
        v = v - q @ (q.T @ v)
    return float(np.linalg.norm(v))


def greedy_span_indices(points, rho: float, k: int) -> list:
    """Indices chosen by the greedy spanning search (at most k + 1 of them).

    Starts from index 0 and repeatedly adds the lowest-index point at
    distance at least rho from the affine span of those chosen so far.  When
    fewer than k + 1 indices come back, every point lies within rho of the
    span of the returned ones.
    """
    pts = np.asarray(points, float)
    if pts.shape[0] == 0:
        return []
    chosen = [0]
    while len(chosen) < k + 1:
        base = pts[chosen[0]]
        dirs = pts[chosen[1:]] - base
        nxt = None
        for i in range(pts.shape[0]):
            if i in chosen:
                continue
            if _distance_to_span(pts[i], base, dirs) >= rho:
                nxt = i
                break
        if nxt is None:
            break
        chosen.append(nxt)
    return chosen


def effective_span(points, rho: float, k: int):
    """Greedy rho-effectively spanning (k+1)-tuple, or None."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    pts = np.asarray(points, float)
    chosen = greedy_span_indices(pts, rho, k)
    if len(chosen) < k + 1:
        return None
    return pts[chosen]


def is_effective_span(frame, rho: float) -> bool:
    """Verbatim re-check of the effective spanning condition."""
    frame = np.asarray(frame, float)
    base = frame[0]
    for i in range(1, frame.shape[0]):
        if _distance_to_span(frame[i], base, frame[1:i] - base) < rho:
            return False
    return True


# -- pinched sets and strata --------------------------------------------------

def pinched_set(f: MapField, D, center, r, rho, delta, M) -> np.ndarray:
    """Nodes y of D in B_r(center) with Ord_phi(y, rho r) > M - delta."""
    D = np.asarray(D, dtype=np.int64)
    if D.size == 0:
        return D
    if min(r, rho, delta) <= 0:
        raise ValueError("parameters must be positive")
    pts = f.grid.coords[D]
    inside = np.linalg.norm(pts - np.asarray(center, float), axis=1) <= r
    keep = [int(i) for i, y in zip(D[inside], pts[inside])
            if smoothed_order_value(f, y, rho * r) > M - delta]
    return np.asarray(keep, dtype=np.int64)


@dataclass
class StratumSet:
    k: int
    eta: float
    r: float
    nodes: np.ndarray
    provenance: dict = field(default_factory=dict)

    def coords(self, f: MapField) -> np.ndarray:
        return f.grid.coords[self.nodes]

    def to_csv(self, f: MapField, path, header: Optional[str] = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            fh.write(f"# k={self.k} eta={self.eta!r} r={self.r!r}\n")
            w = csv.writer(fh)
            w.writerow(["node"] + [f"x{i + 1}" for i in range(f.dim)])
            for i in self.nodes:
                w.writerow([int(i)] + [repr(float(c)) for c in f.grid.coords[i]])


def cone_minima(f: MapField, nodes) -> np.ndarray:
    """Nodes whose distance to the cone point is minimal over their B_2h neighborhood."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        return nodes
    g = f.grid
    box = np.full(g.box_shape, np.inf)
    box[tuple(g.box_index.T)] = f.cone_distance()
    low = ndimage.minimum_filter(box, footprint=_ball_footprint(2, g.dim), mode="constant",
                                 cval=np.inf)
    d = f.cone_distance()[nodes]
    return nodes[d <= low[tuple(g.box_index[nodes].T)]]


def dyadic_scales(r: float, top: float = 1.0) -> list:
    out = []
    s = r
    while s <= top * (1 + 1e-12):
        out.append(s)
        s *= 2
    return out


def quantitative_stratum(f: MapField, k: int, eta: float, r: float,
                         degree_cap: Optional[float] = None,
                         candidates: Optional[Sequence[int]] = None) -> StratumSet:
    """Singular nodes that fail (eta, s, k+1)-homogeneity at every dyadic s in [r, 1].

    Candidates are singular nodes with no splitting (J = 0) whose value is a
    local minimum of the distance to the cone point over B_2h and within
    two grid spacings of slope of the cone point.  Strata are defined for
    0 <= k <= n - 2; other k give the empty set.
    """
    if not (0 < eta < 1 and 0 < r <= 1):
        raise ValueError("eta must lie in (0, 1) and r in (0, 1]")
    prov = {"k": k, "eta": eta, "r": r, "degree_cap": degree_cap,
            "scales": dyadic_scales(r), "dictionary": "axis frames + principal frame"}
    n = f.dim
    if not 0 <= k <= n - 2:
        return StratumSet(k, eta, r, np.zeros(0, dtype=np.int64), prov)
    cand = detect_singular(f) if candidates is None else np.asarray(candidates, dtype=np.int64)
    cand = cone_minima(f, cand)
    kept = []
    for node in cand:
        x = f.grid.coords[node]
        if float(norms(f.values[np.array([node])])[0]) > cone_tolerance(f, x):
            continue
        if splitting_data(f, x, radii=[2 * f.spacing]).J != 0:
            continue
        tested = False
        failed_all = True
        for s in prov["scales"]:
            if not f.is_analytic and not f.grid.contains_ball(x, s, margin=2 * f.spacing):
                continue
            tested = True
            if homogeneity_test(f, x, s, k + 1, eta, degree_cap).passed:
                failed_all = False
                break
        if tested and failed_all:
            kept.append(int(node))
    return StratumSet(k, eta, r, np.asarray(kept, dtype=np.int64), prov)


def is_nested(inner: StratumSet, outer: StratumSet) -> bool:
    return bool(np.all(np.isin(inner.nodes, outer.nodes)))
