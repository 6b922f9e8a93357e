"""Good/bad ball covering of strata, packing measures and Minkowski estimates.

Sets are finite collections of grid nodes given by node id.  Every covering
is checked after construction against the discrete form of its guarantees:
coverage, minimum radius, packing sum, tube containment of the pinched
points in bad balls and disjointness of fifth balls.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .fields import MapField
from .flatness import DiscreteMeasure
from .frequency import smoothed_order_value
from .homogeneity import sphere_area
from .strata import greedy_span_indices, quantitative_stratum

RHO = 1 / 256
DELTA = 0.05
PACKING_CONSTANT = 40.0
_EPS = 1e-12

__all__ = [
    "Ball", "BallCover", "CoveringAssertionError", "OrderCache", "initial_cover",
    "refine_cover", "iterate_refine", "verify_initial_cover", "verify_refine_cover",
    "minkowski_estimate", "MinkowskiTable", "packing_measure", "generation_radius",
]


class CoveringAssertionError(AssertionError):
    """A construction step met data contradicting the covering hypotheses."""

    def __init__(self, message, ball=None, detail=None):
        super().__init__(message)
        self.ball = ball
        self.detail = detail or {}


@dataclass
class Ball:
    center: np.ndarray
    radius: float
    label: str = "terminal"
    generation: int = 0
    plane_point: Optional[np.ndarray] = None
    plane_dirs: Optional[np.ndarray] = None     # orthonormal rows
    members: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    branch: str = ""

    def to_json(self) -> dict:
        out = {"center": [float(c) for c in self.center], "radius": float(self.radius),
               "label": self.label, "generation": int(self.generation)}
        if self.branch:
            out["branch"] = self.branch
        return out


@dataclass
class BallCover:
    balls: list
    params: dict
    packing_ratio: float
    history: list = field(default_factory=list)
    rounds: int = 0
    report: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.balls)

    def radii(self) -> np.ndarray:
        return np.array([b.radius for b in self.balls])

    def centers(self) -> np.ndarray:
        return np.array([b.center for b in self.balls])

    def to_json(self) -> list:
        return [b.to_json() for b in self.balls]

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)


def generation_radius(tau: float, rho: float, m: int) -> float:
    """Radius tau (10 rho)^m of generation m."""
    return tau * (10 * rho) ** m


class OrderCache:
    """Memoized Ord_phi(y, r) at nodes of a field.

    Solved fields resolve neither radii below eight grid spacings nor balls
    reaching past the grid: radii are clamped into
    [8h, R - |y - center| - 2h], the range where the discrete order is
    trusted.  Analytic fields take any radius.
    """

    def __init__(self, f: MapField):
        self.f = f
        self._memo = {}
        self.floor = 0.0 if f.is_analytic else 8 * f.spacing

    def radius(self, node: int, r: float) -> float:
        r = float(r)
        if self.f.is_analytic:
            return r
        g = self.f.grid
        reach = g.radius - float(g.center_distance[node]) - 2 * g.spacing
        return max(min(r, reach), self.floor)

    def __call__(self, node: int, r: float) -> float:
        r = self.radius(node, r)
        key = (int(node), r)
        if key not in self._memo:
            self._memo[key] = smoothed_order_value(self.f, self.f.grid.coords[node], r)
        return self._memo[key]

    def many(self, nodes, r) -> np.ndarray:
        return np.array([self(i, r) for i in nodes])


# -- geometry helpers ---------------------------------------------------------

def _affine_frame(points: np.ndarray):
    """(base point, orthonormal direction rows) of the affine span of points."""
    base = points[0]
    if points.shape[0] == 1:
        return base, np.zeros((0, points.shape[1]))
    q, rr = np.linalg.qr((points[1:] - base).T)
    keep = np.abs(np.diag(rr)) > 1e-14
    return base, q[:, keep].T


def _plane_distance(points, base, dirs) -> np.ndarray:
    v = np.atleast_2d(points) - base
    if dirs is not None and dirs.shape[0]:
        v = v - (v @ dirs.T) @ dirs
    return np.linalg.norm(v, axis=1)


def _project(points, base, dirs) -> np.ndarray:
    v = np.atleast_2d(points) - base
    if dirs.shape[0] == 0:
        return np.broadcast_to(base, v.shape).copy()
    return base + (v @ dirs.T) @ dirs


def _lsq_plane(points: np.ndarray, dim: int):
    """Least-squares affine plane of the given dimension through the points."""
    base = points.mean(axis=0)
    if dim == 0 or points.shape[0] < 2:
        return base, np.zeros((0, points.shape[1]))
    _, _, vt = np.linalg.svd(points - base, full_matrices=False)
    return base, vt[:dim]


def _in_ball(points, center, radius) -> np.ndarray:
    if points.shape[0] == 0:
        return np.zeros(0, bool)
    return np.linalg.norm(points - center, axis=1) <= radius * (1 + _EPS)


def _check_params(tau, sigma, rho, delta, k, n):
    if not 0 < rho <= 1 / 256 + _EPS:
        raise ValueError("rho must lie in (0, 1/256]")
    if not 0 < sigma < tau <= 1 / 8 + _EPS:
        raise ValueError("need 0 < sigma < tau <= 1/8")
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not 0 <= k <= n - 1:
        raise ValueError(f"k must lie in [0, {n - 1}]")


# -- ball classification ------------------------------------------------------

def _classify(ball: Ball, D, pts, orders, M, delta, rho, k):
    """Mark a ball good (with plane V) or bad (with (k-1)-plane L)."""
    inside = _in_ball(pts, ball.center, ball.radius)
    ids = np.flatnonzero(inside)
    r_small = rho * ball.radius
    ordv = np.array([orders(D[i], r_small) for i in ids])
    F = ids[ordv > M - delta] if ids.size else ids
    Fp = pts[F]
    chosen = greedy_span_indices(Fp, r_small, k)
    if len(chosen) == k + 1:
        ball.label = "good"
        ball.plane_point, ball.plane_dirs = _affine_frame(Fp[chosen])
        return F
    ball.label = "bad"
    if k == 0:
        # a (-1)-plane is empty: F must be empty, which greedy failure guarantees
        ball.plane_point, ball.plane_dirs = None, None
        return F
    if Fp.shape[0] == 0:
        ball.plane_point, ball.plane_dirs = ball.center.copy(), np.zeros((0, pts.shape[1]))
        return F
    base, dirs = _lsq_plane(Fp, k - 1)
    res = float(_plane_distance(Fp, base, dirs).max())
    if res > r_small:
        # the greedy chain itself spans a plane of dimension < k holding F in its tube
        base, dirs = _affine_frame(Fp[chosen])
        res = float(_plane_distance(Fp, base, dirs).max())
        if res > r_small * (1 + 1e-9):
            raise CoveringAssertionError(
                "pinched points neither span a k-plane nor fit a (k-1)-plane tube",
                ball.to_json(), {"residual": res, "tube": r_small})
        dirs = _pad_dirs(dirs, k - 1, pts.shape[1])
    ball.plane_point, ball.plane_dirs = base, dirs
    return F


def _pad_dirs(dirs, dim, n):
    """Extend orthonormal rows to the requested count (a larger plane keeps containment)."""
    while dirs.shape[0] < dim:
        for a in range(n):
            e = np.eye(n)[a]
            v = e - (dirs.T @ (dirs @ e) if dirs.shape[0] else 0)
            if np.linalg.norm(v) > 1e-6:
                dirs = np.vstack([dirs, v / np.linalg.norm(v)])
                break
    return dirs


def _greedy_centers(points, base, dirs, radius, sep, existing):
    """Ball centers on a plane covering points; lowest index first.

    A point already within ``radius`` of a center is skipped; otherwise its
    projection becomes a new center.  Centers are kept ``sep`` apart.
    """
    centers = list(existing)
    new = []
    for p in points:
        if centers and np.min(np.linalg.norm(np.asarray(centers) - p, axis=1)) <= radius:
            continue
        c = _project(p, base, dirs)[0]
        if centers and np.min(np.linalg.norm(np.asarray(centers) - c, axis=1)) < sep:
            raise CoveringAssertionError("disjoint selection failed", None,
                                         {"point": p.tolist(), "center": c.tolist()})
        centers.append(c)
        new.append(c)
    return new


# -- initial cover ------------------------------------------------------------

def _as_nodes(f: MapField, D) -> np.ndarray:
    D = np.asarray(D if D is not None else [], dtype=np.int64).reshape(-1)
    if np.any((D < 0) | (D >= f.grid.n_nodes)):
        raise ValueError("D must hold node ids of the field")
    return D


def initial_cover(f: MapField, D, x, tau: float, sigma: float, rho: float = RHO,
                  delta: float = DELTA, k: int = 0, M: Optional[float] = None,
                  orders: Optional[OrderCache] = None, verify: bool = True) -> BallCover:
    """Inductive good/bad covering of a node set D inside B_tau(x).

    Generation m uses radius tau (10 rho)^m.  A ball is good when its pinched
    points (those with Ord_phi(y, rho r) > M - delta) rho r-span a k-plane V;
    its nodes are then covered by balls of radius 10 rho r centered on V.
    Other balls are bad and kept; their pinched points lie within rho r of a
    (k-1)-plane.  Balls of the next generation meeting the fifth ball of a
    bad ball are dropped.  The induction stops once the radius is at most
    sigma.

    Parameters
    ----------
    f : MapField
    D : sequence of int
        Node ids, all inside the closed ball B_tau(x).
    M : float, optional
        Order bound; defaults to the maximum of Ord_phi(y, 8 tau) over D.

    Returns
    -------
    BallCover
        Balls labelled ``bad`` (radius above sigma) or ``terminal``.
    """
    x = np.asarray(x, float)
    n = f.dim
    _check_params(tau, sigma, rho, delta, k, n)
    D = _as_nodes(f, D)
    pts = f.grid.coords[D]
    if not np.all(_in_ball(pts, x, tau)):
        raise ValueError("D must lie in B_tau(x)")
    orders = orders or OrderCache(f)
    if M is None:
        M = float(max(orders.many(D, 8 * tau))) if D.size else 0.0
    params = {"tau": tau, "sigma": sigma, "rho": rho, "delta": delta, "k": k, "M": M}
    if D.size == 0:
        return BallCover([Ball(x.copy(), tau, "terminal", 0)], params, 1.0)

    root = Ball(x.copy(), tau, generation=0)
    current = [root]
    kept_bad = []
    history = []
    m = 0
    r = tau
    _classify(root, D, pts, orders, M, delta, rho, k)
    while r > sigma:
        good = [b for b in current if b.label == "good"]
        bad = [b for b in current if b.label == "bad"]
        new_r = generation_radius(tau, rho, m + 1)
        centers = []
        for b in good:
            inside = _in_ball(pts, b.center, b.radius)
            dist = _plane_distance(pts[inside], b.plane_point, b.plane_dirs)
            if dist.size and dist.max() > 2 * rho * b.radius * (1 + 1e-9):
                raise CoveringAssertionError(
                    "stratum nodes of a good ball leave the 2 rho r tube of its plane",
                    b.to_json(), {"max_distance": float(dist.max()),
                                  "tube": 2 * rho * b.radius})
            centers += _greedy_centers(pts[inside], b.plane_point, b.plane_dirs,
                                       new_r, 4 * rho * b.radius, centers)
        kept_bad += bad
        fresh = []
        for c in centers:
            if any(np.linalg.norm(c - bb.center) < new_r + bb.radius / 5 for bb in kept_bad):
                continue
            fresh.append(Ball(c, new_r, generation=m + 1))
        history.append({"generation": m, "radius": r, "good": len(good), "bad": len(bad),
                        "children": len(centers), "kept": len(fresh)})
        m += 1
        r = new_r
        current = fresh
        if r > sigma:
            for b in current:
                _classify(b, D, pts, orders, M, delta, rho, k)
    for b in current:
        b.label = "terminal"
    balls = kept_bad + current
    for b in balls:
        b.members = D[_in_ball(pts, b.center, b.radius)]
    ratio = float(sum(b.radius ** k for b in balls) / tau ** k)
    cover = BallCover(balls, params, ratio, history)
    cover.params["generations"] = m
    if verify:
        cover.report = verify_initial_cover(cover, f, D, orders)
        if not cover.report["ok"]:
            raise CoveringAssertionError("post-hoc check failed", None, cover.report)
    return cover


def _fifth_disjoint(balls) -> bool:
    if len(balls) < 2:
        return True
    c = np.array([b.center for b in balls])
    r = np.array([b.radius for b in balls]) / 5
    tree = cKDTree(c)
    for i, j in tree.query_pairs(2 * r.max()):
        if np.linalg.norm(c[i] - c[j]) < r[i] + r[j] - 1e-15:
            return False
    return True


def verify_initial_cover(cover: BallCover, f: MapField, D, orders=None,
                         constant: float = PACKING_CONSTANT) -> dict:
    """Literal check of coverage, radii, packing, tube containment and fifth balls."""
    p = cover.params
    orders = orders or OrderCache(f)
    D = _as_nodes(f, D)
    pts = f.grid.coords[D]
    covered = np.zeros(D.size, bool)
    for b in cover.balls:
        covered |= _in_ball(pts, b.center, b.radius)
    min_radius = min(b.radius for b in cover.balls)
    tube_ok = True
    worst = 0.0
    for b in cover.balls:
        if b.radius <= p["sigma"] * (1 + _EPS):
            continue
        ids = np.flatnonzero(_in_ball(pts, b.center, b.radius))
        small = p["rho"] * b.radius
        F = [i for i in ids if orders(D[i], small) > p["M"] - p["delta"]]
        if not F:
            continue
        if b.plane_point is None:       # k = 0: the tube around an empty plane is empty
            tube_ok = False
            worst = math.inf
            continue
        d = float(_plane_distance(pts[F], b.plane_point, b.plane_dirs).max())
        worst = max(worst, d / small)
        tube_ok &= d <= small * (1 + 1e-9)
    out = {
        "covered": bool(covered.all()),
        "min_radius_ok": bool(min_radius >= 10 * p["rho"] * p["sigma"] * (1 - _EPS)),
        "packing_ratio": cover.packing_ratio,
        "packing_ok": bool(cover.packing_ratio <= constant),
        "tube_ok": bool(tube_ok),
        "worst_tube_ratio": worst,
        "fifth_disjoint": _fifth_disjoint(cover.balls),
    }
    out["ok"] = all(out[key] for key in ("covered", "min_radius_ok", "packing_ok",
                                         "tube_ok", "fifth_disjoint"))
    return out


# -- refined cover ------------------------------------------------------------

def refine_cover(f: MapField, D, x, S: float, s: float, k: int, eta: Optional[float] = None,
                 delta: float = DELTA, rho: float = RHO, M: Optional[float] = None,
                 orders: Optional[OrderCache] = None, verify: bool = True) -> BallCover:
    """Decomposition of D into pieces D_x inside balls B_{s_x}(x).

    Every piece either has radius s or consists of nodes whose order at
    scale 8 s_x is at most M - delta, where M is the maximum of
    Ord_phi(y, 8 S) over D.  Bad balls of an initial cover are split into
    their order-dropping nodes and a covering of their (k-1)-tube by balls of
    radius 4 rho r, which is covered again while the radius exceeds s.
    Order-dropping pieces are finally recut into concentric balls of radius
    rho r / 8, and every radius below s is raised to s.

    ``eta`` only labels the output; the stratum parameter enters through D.
    """
    x = np.asarray(x, float)
    n = f.dim
    if not 0 < s < S <= 1 / 8 + _EPS:
        raise ValueError("need 0 < s < S <= 1/8")
    _check_params(S, s, rho, delta, k, n)
    D = _as_nodes(f, D)
    orders = orders or OrderCache(f)
    pts_all = f.grid.coords
    if M is None:
        M = float(max(orders.many(D, 8 * S))) if D.size else 0.0
    params = {"S": S, "s": s, "rho": rho, "delta": delta, "k": k, "M": M, "eta": eta}
    if D.size == 0:
        return BallCover([Ball(x.copy(), S, "terminal", 0, branch="small")], params, 1.0)

    pieces = []       # Ball with members and branch "small" or "order_drop"
    stats = {"initial_covers": 0, "tube_balls": 0, "bad_balls": 0}

    def process(nodes, center, tau, depth):
        stats["initial_covers"] += 1
        cov = initial_cover(f, nodes, center, tau, s, rho, delta, k, M, orders, verify=False)
        for b in cov.balls:
            members = b.members
            if members.size == 0:
                continue
            if b.radius <= s * (1 + _EPS):
                pieces.append(Ball(b.center, b.radius, "terminal", depth, members=members,
                                   branch="small"))
                continue
            stats["bad_balls"] += 1
            small = rho * b.radius
            ordv = orders.many(members, small)
            pinched = members[ordv > M - delta]
            drop = members[ordv <= M - delta]
            if drop.size:
                pieces.append(Ball(b.center, b.radius, "terminal", depth, members=drop,
                                   branch="order_drop"))
            if pinched.size == 0:
                continue
            tube_r = 4 * rho * b.radius
            ppts = pts_all[pinched]
            base = b.plane_point
            dirs = b.plane_dirs
            if base is None:
                raise CoveringAssertionError("pinched nodes in a bad ball for k = 0",
                                             b.to_json())
            centers = _greedy_centers(ppts, base, dirs, tube_r, 0.0, [])
            stats["tube_balls"] += len(centers)
            owner = np.argmin(np.linalg.norm(ppts[:, None, :] - np.asarray(centers)[None],
                                             axis=2), axis=1)
            for j, c in enumerate(centers):
                sub = pinched[owner == j]
                if sub.size == 0:
                    continue
                if tube_r <= s * (1 + _EPS):
                    pieces.append(Ball(c, tube_r, "terminal", depth + 1, members=sub,
                                       branch="small"))
                else:
                    process(sub, c, tube_r, depth + 1)

    process(D, x, S, 0)

    balls = []
    for piece in pieces:
        if piece.branch == "order_drop":
            small = rho * piece.radius / 8
            mp = pts_all[piece.members]
            centers = _greedy_centers(mp, mp[0], np.eye(n), small, 0.0, [])
            owner = np.argmin(np.linalg.norm(mp[:, None, :] - np.asarray(centers)[None],
                                             axis=2), axis=1)
            for j, c in enumerate(centers):
                balls.append(Ball(c, small, "terminal", piece.generation,
                                  members=piece.members[owner == j], branch="order_drop"))
        else:
            balls.append(piece)
    # each node belongs to exactly one piece: keep its first occurrence
    seen = set()
    for b in balls:
        keep = [int(i) for i in b.members if int(i) not in seen]
        seen.update(keep)
        b.members = np.asarray(keep, dtype=np.int64)
        if b.radius < s:
            b.radius = s
    balls = [b for b in balls if b.members.size]
    ratio = float(sum(b.radius ** k for b in balls) / S ** k)
    cover = BallCover(balls, params, ratio, [stats])
    if verify:
        cover.report = verify_refine_cover(cover, f, D, orders)
        if not cover.report["ok"]:
            raise CoveringAssertionError("post-hoc check failed", None, cover.report)
    return cover


def verify_refine_cover(cover: BallCover, f: MapField, D, orders=None,
                        constant: float = PACKING_CONSTANT) -> dict:
    """Literal check of the decomposition, packing sum and order-drop alternative."""
    p = cover.params
    orders = orders or OrderCache(f)
    D = _as_nodes(f, D)
    pts = f.grid.coords
    counts = {}
    contained = True
    alternative = True
    branches = {"small": 0, "order_drop": 0}
    dropped_pieces = 0
    for b in cover.balls:
        for i in b.members:
            counts[int(i)] = counts.get(int(i), 0) + 1
        if b.members.size:
            contained &= bool(np.all(_in_ball(pts[b.members], b.center, b.radius)))
        if b.branch in branches:
            branches[b.branch] += 1
        drop = bool(b.members.size) and bool(
            np.all(orders.many(b.members, 8 * b.radius) <= p["M"] - p["delta"] + 1e-12))
        dropped_pieces += drop
        if not (abs(b.radius - p["s"]) <= _EPS * p["s"] or drop or b.members.size == 0):
            alternative = False
    partition = (set(counts) == set(int(i) for i in D)) and all(v == 1 for v in counts.values())
    out = {
        "partition": bool(partition),
        "contained": bool(contained),
        "packing_ratio": cover.packing_ratio,
        "packing_ok": bool(cover.packing_ratio <= constant),
        "alternative_ok": bool(alternative),
        "branches": branches,
        "pieces_with_order_drop": int(dropped_pieces),
    }
    out["ok"] = all(out[key] for key in ("partition", "contained", "packing_ok",
                                         "alternative_ok"))
    return out


def iterate_refine(f: MapField, D, x, r: float, k: int, delta: float = DELTA,
                   rho: float = RHO, S: float = 1 / 8, orders: Optional[OrderCache] = None):
    """Repeat refine_cover on pieces larger than r until all have radius r.

    Each round lowers the order bound of the pieces it recuts by delta, so
    at most ceil(M / delta) rounds can occur; exceeding that raises.

    Returns
    -------
    (list of Ball, rounds, M)
    """
    D = _as_nodes(f, D)
    orders = orders or OrderCache(f)
    if D.size == 0:
        return [], 0, 0.0
    if r >= S:
        return [Ball(np.asarray(x, float), S, "terminal", 0, members=D)], 0, 0.0
    M = float(max(orders.many(D, 8 * S)))
    limit = max(1, math.ceil(M / delta))
    pending = [(D, np.asarray(x, float), S)]
    final = []
    rounds = 0
    while pending:
        rounds += 1
        if rounds > limit:
            raise CoveringAssertionError("refinement exceeded its round bound", None,
                                         {"rounds": rounds, "limit": limit})
        nxt = []
        for nodes, center, scale in pending:
            if r >= scale:
                final.append(Ball(center, scale, "terminal", rounds, members=nodes))
                continue
            cov = refine_cover(f, nodes, center, scale, r, k, delta=delta, rho=rho,
                               orders=orders)
            for b in cov.balls:
                if abs(b.radius - r) <= _EPS * r:
                    final.append(b)
                else:
                    nxt.append((b.members, b.center, min(b.radius, 1 / 8)))
        pending = nxt
    return final, rounds, M


# -- packing measures and Minkowski estimates -----------------------------------

def packing_measure(cover: BallCover, k: Optional[int] = None) -> DiscreteMeasure:
    """Atoms at the ball centers with masses radius^k."""
    if k is None:
        k = cover.params["k"]
    if not _fifth_disjoint(cover.balls):
        raise ValueError("fifth balls of the cover are not disjoint")
    if not cover.balls:
        return DiscreteMeasure.empty(0)
    return DiscreteMeasure(cover.centers(), cover.radii() ** k)


def unit_ball_volume(n: int) -> float:
    return sphere_area(n) / n


@dataclass
class MinkowskiTable:
    k: int
    radii: np.ndarray
    tube_volume: np.ndarray
    cover_bound: np.ndarray
    ball_counts: np.ndarray
    rounds: np.ndarray
    slope: float
    cover_slope: float

    def to_csv(self, path, header: Optional[str] = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            fh.write(f"# k={self.k} slope={self.slope!r} cover_slope={self.cover_slope!r}\n")
            w = csv.writer(fh)
            w.writerow(["r", "tube_volume", "cover_bound", "balls", "rounds"])
            for row in zip(self.radii, self.tube_volume, self.cover_bound, self.ball_counts,
                           self.rounds):
                w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])),
                            int(row[3]), int(row[4])])


def tube_volume(points: np.ndarray, r: float, spacing: float) -> float:
    """Volume of the union of closed r-balls about points, by lattice counting."""
    points = np.atleast_2d(np.asarray(points, float))
    if points.shape[0] == 0 or points.shape[1] == 0:
        return 0.0
    n = points.shape[1]
    lo = points.min(axis=0) - r
    hi = points.max(axis=0) + r
    axes = [np.arange(a + spacing / 2, b, spacing) for a, b in zip(lo, hi)]
    tree = cKDTree(points)
    total = 0
    # slab by slab along the first axis to bound memory
    rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), -1).reshape(-1, n - 1)
    for a in axes[0]:
        lat = np.column_stack([np.full(rest.shape[0], a), rest]) if n > 1 else np.array([[a]])
        d, _ = tree.query(lat, distance_upper_bound=r * (1 + 1e-12))
        total += int(np.count_nonzero(np.isfinite(d)))
    return total * spacing ** n


def minkowski_estimate(f: MapField, k: int, eta: float, radii: Sequence[float],
                       stratum=None, cover_nodes=None, center=None,
                       delta: float = DELTA, rho: float = RHO,
                       degree_cap: Optional[float] = None) -> MinkowskiTable:
    """Tube volumes about a stratum and the covering bound, with log-log slopes.

    (a) |B_r(stratum nodes)| by counting a lattice of spacing min(h, r/16);
    (b) omega_n 2^n r^n times the number of balls from ``iterate_refine`` on
    ``cover_nodes`` (the stratum nodes within 1/8 of ``center`` by default).

    The stratum defaults to the quantitative stratum at the smallest radius.
    """
    radii = np.sort(np.asarray(radii, float))[::-1]
    h = f.spacing
    if radii.size == 0 or radii.min() < h * (1 - 1e-12):
        raise ValueError("radii must be at least one grid spacing")
    n = f.dim
    if stratum is None:
        stratum = quantitative_stratum(f, k, eta, float(radii.min()), degree_cap).nodes
    stratum = _as_nodes(f, stratum)
    pts = f.grid.coords[stratum]
    if center is None:
        center = np.asarray(f.grid.center, float)
    if cover_nodes is None:
        cover_nodes = stratum[_in_ball(pts, center, 1 / 8)]
    cover_nodes = _as_nodes(f, cover_nodes)
    orders = OrderCache(f)
    vols, bounds, counts, rounds = [], [], [], []
    for r in radii:
        vols.append(tube_volume(pts, r, min(h, r / 16)))
        balls, nr, _ = iterate_refine(f, cover_nodes, center, float(r), k, delta, rho,
                                      orders=orders)
        counts.append(len(balls))
        rounds.append(nr)
        bounds.append(unit_ball_volume(n) * 2 ** n * r ** n * len(balls))
    vols = np.array(vols)
    bounds = np.array(bounds)

    def slope(v):
        ok = v > 0
        if ok.sum() < 2:
            return float("nan")
        return float(np.polyfit(np.log(radii[ok]), np.log(v[ok]), 1)[0])

    return MinkowskiTable(k, radii, vols, bounds, np.array(counts), np.array(rounds),
                          slope(vols), slope(bounds))
