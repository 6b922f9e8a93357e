"""Mean flatness of discrete measures, Jones integrals and the Reifenberg check."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .fields import MapField
from .frequency import _inside, _lattice, default_spacing, smoothed_order_value
from .homogeneity import homogeneity_test
from .targets import sq_distances

LOG2 = math.log(2.0)


@dataclass
class DiscreteMeasure:
    """Finitely many weighted atoms in R^n."""

    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, float)
        if self.points.ndim == 1:
            self.points = self.points.reshape(1, -1) if self.points.size else self.points.reshape(0, 1)
        self.masses = np.asarray(self.masses, float).reshape(-1)
        if self.points.shape[0] != self.masses.size:
            raise ValueError("one mass per atom")
        if np.any(self.masses < 0) or not np.all(np.isfinite(self.masses)):
            raise ValueError("masses must be finite and nonnegative")

    @classmethod
    def unit(cls, points) -> "DiscreteMeasure":
        pts = np.asarray(points, float)
        return cls(pts, np.ones(pts.shape[0]))

    @classmethod
    def empty(cls, dim: int) -> "DiscreteMeasure":
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.masses.size

    def total(self) -> float:
        return float(self.masses.sum())

    def mass_in_ball(self, x, r) -> float:
        sel = np.linalg.norm(self.points - np.asarray(x, float), axis=1) <= r * (1 + 1e-12)
        return float(self.masses[sel].sum())

    def min_separation(self) -> float:
        if len(self) < 2:
            return math.inf
        d, _ = cKDTree(self.points).query(self.points, k=2)
        pos = d[:, 1][d[:, 1] > 0]
        return float(pos.min()) if pos.size else math.inf

    def to_csv(self, path, header: Optional[str] = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(self.dim)] + ["mass"])
            for p, m in zip(self.points, self.masses):
                w.writerow([repr(float(v)) for v in p] + [repr(float(m))])

    @classmethod
    def from_csv(cls, path) -> "DiscreteMeasure":
        with open(path) as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
        data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(len(rows) - 1, len(rows[0]))
        return cls(data[:, :-1], data[:, -1])


def _check_k(k, n):
    if not 0 <= k <= n - 1:
        raise ValueError(f"k must lie in [0, {n - 1}]")


def mean_flatness(mu: DiscreteMeasure, x, r, k) -> float:
    """r^(-k-2) times the least-squares distance of mu|B_r(x) to an affine k-plane.

    The optimal plane passes through the barycenter; the residual is the sum
    of the n - k smallest eigenvalues of the weighted second moment matrix.
    """
    n = mu.dim
    _check_k(k, n)
    if not r > 0:
        raise ValueError("r must be positive")
    x = np.asarray(x, float)
    sel = np.linalg.norm(mu.points - x, axis=1) <= r * (1 + 1e-12)
    m = mu.masses[sel]
    total = m.sum()
    if total <= 0:
        return 0.0
    pts = mu.points[sel] - x
    bary = (m[:, None] * pts).sum(0) / total
    c = pts - bary
    moment = (m[:, None, None] * c[:, :, None] * c[:, None, :]).sum(0)
    ev = np.linalg.eigvalsh(moment)
    return float(max(ev[: n - k].sum(), 0.0) / r ** (k + 2))


@dataclass
class JonesIntegral:
    value: float
    truncation_scale: float
    levels: int
    terms: list = field(default_factory=list)


def jones_integral(mu: DiscreteMeasure, x, t, k) -> JonesIntegral:
    """Dyadic quadrature of the integral of D(x, s) ds / s over (0, t]."""
    if not t > 0:
        raise ValueError("t must be positive")
    sep = mu.min_separation()
    terms = []
    s = float(t)
    while True:
        terms.append(mean_flatness(mu, x, s, k))
        # below the atom separation every ball holds at most one atom
        if not math.isfinite(sep) or s < sep:
            break
        s /= 2
    return JonesIntegral(float(sum(terms) * LOG2), s, len(terms), terms)


def _flatness_all_atoms(mu: DiscreteMeasure, tree: cKDTree, s: float, k: int) -> np.ndarray:
    """D(z, s) for every atom z, using sparse neighbor sums."""
    n = mu.dim
    N = len(mu)
    pairs = tree.query_pairs(s * (1 + 1e-12), output_type="ndarray")
    rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(N)])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(N)])
    adj = sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(N, N))
    m = mu.masses
    # moments of neighbors relative to the ball center
    M0 = adj @ m
    M1 = adj @ (m[:, None] * mu.points) - M0[:, None] * mu.points
    outer = (mu.points[:, :, None] * mu.points[:, None, :]).reshape(N, n * n)
    S2 = (adj @ (m[:, None] * outer)).reshape(N, n, n)
    S1 = adj @ (m[:, None] * mu.points)
    z = mu.points
    M2 = (S2 - z[:, :, None] * S1[:, None, :] - S1[:, :, None] * z[:, None, :]
          + M0[:, None, None] * z[:, :, None] * z[:, None, :])
    safe = np.where(M0 > 0, M0, 1.0)
    cov = M2 - M1[:, :, None] * M1[:, None, :] / safe[:, None, None]
    ev = np.linalg.eigvalsh(cov)
    return np.clip(ev[:, : n - k].sum(axis=1), 0.0, None) / s ** (k + 2)


@dataclass
class ReifenbergReport:
    passed: bool
    max_ratio: float
    worst_ball: Optional[tuple]
    delta_R: float
    k: int
    packing_sum: Optional[float]
    C_R: float
    packing_ok: Optional[bool]
    balls_checked: int
    truncation_scale: float

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def reifenberg_hypothesis(mu: DiscreteMeasure, delta_R: float, k: int, C_R: float = 40.0,
                          top: float = 1.0) -> ReifenbergReport:
    """Check the Jones-type smallness condition on atom-centered dyadic balls in B_2.

    For each ball B_r(y) (r = top, top/2, ... down to the atom separation)
    the mu-integral over the ball of the dyadic Jones integral up to r is
    compared with delta_R^2 r^k.  On a pass the mass of B_1 is reported
    against C_R.
    """
    if not delta_R > 0:
        raise ValueError("delta_R must be positive")
    if len(mu) == 0:
        return ReifenbergReport(True, 0.0, None, delta_R, k, 0.0, C_R, True, 0, 0.0)
    _check_k(k, mu.dim)
    tree = cKDTree(mu.points)
    sep = mu.min_separation()
    floor = sep / 2 if math.isfinite(sep) else top
    scales = [top]
    while scales[-1] > floor:
        scales.append(scales[-1] / 2)
    scales = scales[::-1]  # ascending
    flat = np.stack([_flatness_all_atoms(mu, tree, s, k) for s in scales], axis=1)
    jones = np.cumsum(flat, axis=1) * LOG2  # jones[:, i] covers scales[0..i]
    norm_pts = np.linalg.norm(mu.points, axis=1)
    worst, worst_ball, checked = 0.0, None, 0
    for i, r in enumerate(scales):
        centers = np.flatnonzero(norm_pts + r <= 2.0 * (1 + 1e-12))
        if centers.size == 0:
            continue
        weighted = mu.masses * jones[:, i]
        for c, nb in zip(centers, tree.query_ball_point(mu.points[centers], r * (1 + 1e-12))):
            checked += 1
            ratio = float(weighted[nb].sum()) / (delta_R ** 2 * r ** k)
            if ratio > worst:
                worst, worst_ball = ratio, (tuple(mu.points[c].tolist()), r)
    passed = worst <= 1.0
    packing = mu.mass_in_ball(np.zeros(mu.dim), 1.0) if passed else None
    return ReifenbergReport(bool(passed), float(worst), worst_ball, delta_R, k, packing, C_R,
                            None if packing is None else bool(packing <= C_R), checked, scales[0])


# -- field based quantities ---------------------------------------------------

@dataclass
class PinchingFlatness:
    ratio: float
    flatness: float
    pinching_integral: float
    not_homogeneous: Optional[bool]
    pinched_at_center: Optional[bool]
    anomaly: bool

    @property
    def gated(self) -> bool:
        return bool(self.not_homogeneous) and bool(self.pinched_at_center)


def pinching_flatness_ratio(f: Optional[MapField], mu: DiscreteMeasure, x, r, k, eta=0.1,
                            rho=1 / 256, delta=0.05, pinching_values=None,
                            check_gates: bool = True) -> PinchingFlatness:
    """Empirical constant relating mean flatness to the pinching integral.

    Returns D(x, r/8) r^k divided by the mu-integral over B_{r/8}(x) of
    W_{r/8}^{4r}.  ``pinching_values`` (one per atom) replaces the field
    computation for synthetic runs.  Gating conditions are evaluated and
    reported, never enforced.
    """
    x = np.asarray(x, float)
    D = mean_flatness(mu, x, r / 8, k)
    sel = np.flatnonzero(np.linalg.norm(mu.points - x, axis=1) <= r / 8 * (1 + 1e-12))
    if pinching_values is not None:
        W = np.asarray(pinching_values, float)[sel]
    else:
        W = np.array([smoothed_order_value(f, y, 4 * r) - smoothed_order_value(f, y, r / 8)
                      for y in mu.points[sel]])
    integral = float((mu.masses[sel] * W).sum())
    not_hom = pinched = None
    if check_gates and f is not None:
        try:
            not_hom = not homogeneity_test(f, x, r, k + 1, eta).passed
        except ValueError:
            not_hom = None
        try:
            pinched = (smoothed_order_value(f, x, 2 * r)
                       - smoothed_order_value(f, x, rho * r, spacing=default_spacing(f, rho * r))) < delta
        except ValueError:
            pinched = None
    if D == 0:
        ratio, anomaly = 0.0, False
    elif integral <= 0:
        ratio, anomaly = math.inf, True
    else:
        ratio, anomaly = D * r ** k / integral, False
    return PinchingFlatness(ratio, D, integral, not_hom, pinched, anomaly)


def annular_directional_energy(f: MapField, x, r, frame) -> float:
    """r^(2-n) times the energy along the frame directions in the annulus 3r/4 < |y-x| < 5r/4."""
    x = np.asarray(x, float)
    n = f.dim
    outer = 1.25 * r
    if not f.is_analytic and not f.grid.contains_ball(x, outer, margin=2 * f.spacing):
        raise ValueError("annulus leaves the grid")
    lat = _lattice(f, x, outer, default_spacing(f, outer), need_density=False)
    shell = _inside(lat, x, outer) - _inside(lat, x, 0.75 * r)
    sel = shell > 0
    pts = lat.points[sel]
    eps = lat.spacing / 2 if f.is_analytic else lat.spacing
    total = np.zeros(pts.shape[0])
    for v in np.asarray(frame, float).reshape(-1, n):
        v = v / np.linalg.norm(v)
        total += sq_distances(f.at(pts + eps * v), f.at(pts - eps * v)) / (2 * eps) ** 2
    return float((shell[sel] * total).sum() * lat.spacing ** n * r ** (2 - n))


@dataclass
class DyadicBound:
    lhs: float
    rhs: float
    scales: list
    order_top: float
    order_floor: float
    note: str = ("the order at zero is replaced by the order at the floor radius; "
                 "by monotonicity this value is at least the limit")

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs


def dyadic_pinching_bound(f: MapField, xi, t, s_min: Optional[float] = None) -> DyadicBound:
    """Dyadic form of the integral of W_s^{32 s}(xi) ds / s over (0, t].

    lhs = log 2 times the sum of W_{s_j}^{32 s_j} over s_j = t 2^-j;
    rhs = 6 log 2 (Ord_phi(xi, 32 t) - Ord_phi(xi, floor)).

    For solved fields the order at radii below eight grid spacings is the
    order at eight grid spacings (the grid does not resolve smaller balls,
    and the interpolant is not harmonic there), so the floor is 8h and the
    sum stops once 32 s_j drops below it.  Analytic fields use ``s_min``
    (default t / 16) as the floor.
    """
    xi = np.asarray(xi, float)
    if not f.is_analytic:
        floor = 8 * f.spacing
        if not f.grid.contains_ball(xi, 32 * t, margin=2 * f.spacing):
            raise ValueError("the ball of radius 32 t leaves the grid")
    else:
        floor = s_min if s_min is not None else t / 16
    cache = {}

    def order_at(s):
        s = max(s, floor)
        key = round(s, 15)
        if key not in cache:
            cache[key] = smoothed_order_value(f, xi, s)
        return cache[key]

    scales = []
    s = float(t)
    while 32 * s > floor * (1 + 1e-12) and s >= floor * (1 - 1e-12) / 2 ** 10:
        scales.append(s)
        if s <= floor * (1 + 1e-12):
            break
        s /= 2
    lhs = LOG2 * sum(order_at(32 * s) - order_at(s) for s in scales)
    rhs = 6 * LOG2 * (order_at(32 * t) - order_at(floor))
    return DyadicBound(float(lhs), float(rhs), scales, order_at(32 * t), order_at(floor))
