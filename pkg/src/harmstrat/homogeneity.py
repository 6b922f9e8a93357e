"""Homogeneous competitor maps and the quantitative homogeneity test.

A map h is k-homogeneous about x0 with degree alpha when it scales like
|y - x0|^alpha along rays from x0 and is invariant under translations by a
k-dimensional subspace V.  The competitors built here are symmetrizations of
the field itself: the field is read on the unit sphere of V-perp (at the
tested radius) and extended homogeneously.

The test quantifies over a finite dictionary of such competitors, so a pass
is a certificate while a failure only holds relative to the dictionary.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .fields import AnalyticMap, MapField, _difference_density
from .frequency import smoothed_order
from .targets import ConicalTarget, PointArray, cone_scales, distances, norms

SUP_SAMPLES = {2: 16, 3: 8}
DEFAULT_ETA0 = 0.1


@dataclass
class HomogeneousMap:
    """y -> cone_scale(profile(w / |w|), (|w| / scale)^degree), w the V-perp part of y - center."""

    degree: float
    frame: np.ndarray          # (k, n) orthonormal rows spanning V
    profile: Callable          # unit vectors of V-perp (as (N, n) arrays) -> PointArray
    center: np.ndarray
    target: ConicalTarget
    scale: float = 1.0
    gradient_ratio: Optional[float] = None

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be at least 1")
        self.center = np.asarray(self.center, float)
        n = self.center.size
        self.frame = np.asarray(self.frame, float).reshape(-1, n)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def k(self) -> int:
        return self.frame.shape[0]

    def at(self, points) -> PointArray:
        pts = np.asarray(points, float)
        flat = pts.reshape(-1, self.dim) - self.center
        w = flat - (flat @ self.frame.T) @ self.frame
        size = np.linalg.norm(w, axis=1)
        pos = size > 1e-300
        dirs = np.zeros_like(w)
        dirs[pos] = w[pos] / size[pos, None]
        out = PointArray.cone(flat.shape[0], self.target.flat_dim)
        if np.any(pos):
            vals = self.profile(dirs[pos])
            out.set(np.flatnonzero(pos), cone_scales(vals, (size[pos] / self.scale) ** self.degree))
        return out.reshape(pts.shape[:-1])

    def as_analytic(self) -> AnalyticMap:
        return AnalyticMap(f"homogeneous_{self.degree:g}_k{self.k}", self.dim, self.target, self.at)


@dataclass
class HomogeneityVerdict:
    passed: bool
    r: float
    k: int
    eta: float
    best_discrepancy: float
    threshold: float
    witness: Optional[HomogeneousMap]
    dictionary_size: int
    x: tuple = ()

    def to_json(self) -> dict:
        w = self.witness
        return {
            "x": list(self.x),
            "r": self.r,
            "k": self.k,
            "eta": self.eta,
            "passed": self.passed,
            "discrepancy": self.best_discrepancy,
            "witness_frame": None if w is None else w.frame.tolist(),
            "witness_degree": None if w is None else w.degree,
        }


def _as_frame(V, n) -> np.ndarray:
    if V is None:
        return np.zeros((0, n))
    V = np.asarray(V, float).reshape(-1, n)
    if V.shape[0] == 0:
        return V
    q, rr = np.linalg.qr(V.T)
    if np.any(np.abs(np.diag(rr)) < 1e-12):
        raise ValueError("frame vectors are linearly dependent")
    return q.T


def symmetrize(f, x, alpha: float, V=None, r: float = 1.0,
               check_gradient: bool = False) -> HomogeneousMap:
    """Homogeneous extension of the field from the sphere of radius r in V-perp.

    The value at x + v + w (v in V, w in V-perp) is the field at
    x + r w / |w| scaled by (|w| / r)^alpha.  With ``check_gradient`` the
    ratio of sup |grad h| over B_r(x) to (1 + 4 alpha) sup |grad u| over
    B_2r(x) is recorded on the result.
    """
    x = np.asarray(x, float)
    n = x.size
    frame = _as_frame(V, n)
    evaluate = f.at
    if isinstance(f, MapField) and not f.is_analytic:
        if not f.grid.contains_ball(x, r):
            raise ValueError("the symmetrization sphere leaves the grid")
    target = f.target

    def profile(dirs, evaluate=evaluate, x=x, r=r):
        return evaluate(x + r * dirs)

    hmap = HomogeneousMap(float(alpha), frame, profile, x, target, scale=float(r))
    if check_gradient:
        hmap.gradient_ratio = gradient_ratio(f, hmap, x, r)
    return hmap


def _lipschitz_on_ball(evaluate, x, r, n, samples, step):
    q = 2 * r / samples
    k = samples // 2
    ax = np.arange(-k, k + 1) * q
    mesh = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), -1).reshape(-1, n)
    mesh = mesh[np.linalg.norm(mesh, axis=1) <= r - step]
    dens = _difference_density(evaluate, x + mesh, step, n)
    return float(np.sqrt(dens.max())) if dens.size else 0.0


def sup_gradient(f, x, r) -> float:
    """sup of |grad u| over B_r(x) (over interior nodes for solved fields)."""
    x = np.asarray(x, float)
    if isinstance(f, MapField) and not f.is_analytic:
        g = f.grid
        sel = np.linalg.norm(g.coords - x, axis=1) <= r
        dens = f.node_density()[sel]
        dens = dens[~np.isnan(dens)]
        return float(np.sqrt(dens.max())) if dens.size else 0.0
    n = x.size
    return _lipschitz_on_ball(f.at, x, r, n, 64 if n == 2 else 24, r / 512)


def gradient_ratio(f, hmap: HomogeneousMap, x, r) -> float:
    n = np.asarray(x).size
    top = _lipschitz_on_ball(hmap.at, np.asarray(x, float), r, n, 64 if n == 2 else 24, r / 512)
    ref = (1 + 4 * hmap.degree) * sup_gradient(f, x, 2 * r)
    return top / ref if ref > 0 else (0.0 if top == 0 else math.inf)


# -- dictionary ---------------------------------------------------------------

def principal_frame(points: np.ndarray, k: int) -> Optional[np.ndarray]:
    """Top-k principal directions of a point cloud (None if too few points)."""
    if k == 0:
        return np.zeros((0, points.shape[1]))
    if points.shape[0] < 2:
        return None
    c = points - points.mean(axis=0)
    _, s, vt = np.linalg.svd(c, full_matrices=True)
    if s[0] <= 0:
        return None
    return vt[:k]


def _smoothed_at(f, x, r):
    """(E_phi, I_phi, Ord_phi), refining the quadrature below eight grid spacings."""
    if isinstance(f, MapField) and not f.is_analytic and r < 8 * f.spacing:
        return smoothed_order(f, x, r, spacing=r / 32)
    return smoothed_order(f, x, r)


def candidate_degrees(order_value: float, degree_cap: Optional[float] = None) -> list:
    base = [order_value, 1.0, 1.5, 2.0, order_value - 0.25, order_value + 0.25]
    out = []
    for a in base:
        if a < 1 or (degree_cap is not None and a > degree_cap):
            continue
        if not any(abs(a - b) < 1e-12 for b in out):
            out.append(float(a))
    return out


def competitor_dictionary(f, x, r, k, degree_cap: Optional[float] = None,
                          order_value: Optional[float] = None,
                          use_pca: bool = True) -> list:
    """Finite family of k-homogeneous competitors at (x, r).

    Frames: every axis-aligned k-subspace, plus the top-k principal
    directions of the detected singular nodes in B_2r(x).  Degrees:
    Ord_phi(x, r), 1, 1.5, 2 and Ord_phi(x, r) +- 0.25, keeping those in
    [1, degree_cap].  ``degree_cap=None`` leaves the degrees uncapped.
    """
    x = np.asarray(x, float)
    n = x.size
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in [0, {n}]")
    frames = [np.eye(n)[list(c)] for c in itertools.combinations(range(n), k)]
    if use_pca and 0 < k < n and isinstance(f, MapField):
        sing = f.singular_nodes()
        pts = f.grid.coords[sing]
        pts = pts[np.linalg.norm(pts - x, axis=1) <= 2 * r]
        pf = principal_frame(pts, k)
        if pf is not None:
            frames.append(pf)
    if order_value is None:
        order_value = _smoothed_at(f, x, r)[2]
    degrees = candidate_degrees(order_value, degree_cap)
    if not degrees:
        degrees = [1.0]
    return [symmetrize(f, x, a, V, r) for V in frames for a in degrees]


def _sup_points(f, x, r) -> np.ndarray:
    n = x.size
    if isinstance(f, MapField) and not f.is_analytic:
        g = f.grid
        stride = max(1, int(math.floor(r / (SUP_SAMPLES[n] * g.spacing))))
        keep = np.all(g.box_index % stride == 0, axis=1)
        pts = g.coords[keep]
        return pts[np.linalg.norm(pts - x, axis=1) <= r * (1 + 1e-12)]
    q = r / SUP_SAMPLES[n]
    k = SUP_SAMPLES[n]
    ax = np.arange(-k, k + 1) * q
    mesh = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), -1).reshape(-1, n)
    mesh = mesh[np.linalg.norm(mesh, axis=1) <= r * (1 + 1e-12)]
    return x + mesh


def cone_tolerance(f, x) -> float:
    """How far u(x) may sit from the cone point: two grid spacings of slope."""
    if not isinstance(f, MapField):
        return 1e-12
    h = f.spacing
    return 2 * h * max(sup_gradient(f, x, 2 * h), 1e-12)


def homogeneity_test(f, x, r, k, eta, degree_cap: Optional[float] = None,
                     dictionary: Optional[Sequence[HomogeneousMap]] = None,
                     order_value: Optional[float] = None) -> HomogeneityVerdict:
    """Is the field (eta, r, k)-homogeneous at x against the dictionary?

    The discrepancy of a competitor is the sup over B_r(x) of d(u, h),
    sampled on a lattice of roughly 16 (2D) or 8 (3D) points per radius.
    The test passes when some competitor's discrepancy is at most
    eta (I_phi(x, r) / r^(n-1))^(1/2).
    """
    x = np.asarray(x, float)
    n = x.size
    d0 = float(norms(f.at(x[None, :]))[0])
    if d0 > cone_tolerance(f, x):
        raise ValueError(f"u(x) is {d0:.3e} away from the cone point")
    e_phi, i_phi, ord_phi = _smoothed_at(f, x, r)
    if order_value is None:
        order_value = ord_phi
    threshold = eta * math.sqrt(max(i_phi, 0.0) / r ** (n - 1))
    if dictionary is None:
        dictionary = competitor_dictionary(f, x, r, k, degree_cap, order_value)
    pts = _sup_points(f, x, r)
    u = f.at(pts)
    best, witness = math.inf, None
    for hmap in dictionary:
        d = float(distances(u, hmap.at(pts)).max())
        if d < best:
            best, witness = d, hmap
    return HomogeneityVerdict(bool(best <= threshold), float(r), int(k), float(eta),
                              best, threshold, witness, len(dictionary), tuple(x.tolist()))


# -- degree bound ---------------------------------------------------------------

def sphere_area(n: int) -> float:
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)


def annulus_constant(n: int) -> float:
    """C(n) = 2 |S^(n-1)| (1 - 2^(1-n)) / (n - 1)."""
    return 2 * sphere_area(n) * (1 - 2.0 ** (1 - n)) / (n - 1)


@dataclass
class DegreeBound:
    A: float
    beta: float
    r0: float
    lipschitz_constant: float
    eta0: float
    radii: list = field(default_factory=list, repr=False)


def degree_bound(f, eta0: float = DEFAULT_ETA0, radii: Optional[Sequence[float]] = None,
                 x=None, normalization_tol: float = 1e-3) -> DegreeBound:
    """Admissible upper bound for the degree of homogeneous competitors.

    Requires I_phi(0, 1) = 1.  With beta = C(n) (2 eta0)^2, r0 is the
    smallest scanned radius with r0 E_phi(r0) >= beta E_phi(1), the
    constant is d(u(0), 0) + sup_{B_2} |grad u| + eta0, and the bound is
    the A solving r0^A C = eta0.
    """
    n = f.dim if isinstance(f, MapField) else len(np.atleast_1d(x))
    x = np.zeros(n) if x is None else np.asarray(x, float)
    e1, i1, _ = _smoothed_at(f, x, 1.0)
    if abs(i1 - 1.0) > normalization_tol:
        raise ValueError(f"field is not normalized: I_phi(0, 1) = {i1:.6g}")
    beta = annulus_constant(n) * (2 * eta0) ** 2
    if radii is None:
        radii = np.geomspace(1 / 64, 1.0, 49)
        if isinstance(f, MapField) and not f.is_analytic:
            radii = radii[radii >= 8 * f.spacing]
    radii = sorted(float(v) for v in radii)
    r0 = None
    for r in radii:
        if r >= 1:
            break
        e = _smoothed_at(f, x, r)[0]
        if r * e >= beta * e1:
            r0 = r
            break
    if r0 is None:
        raise ValueError("no scanned radius satisfies the energy ratio condition")
    reach = 2.0
    if isinstance(f, MapField) and not f.is_analytic:
        reach = min(2.0, f.grid.radius - float(np.linalg.norm(x - np.asarray(f.grid.center))))
    lip = sup_gradient(f, x, reach)
    const = float(norms(f.at(x[None, :]))[0]) + lip + eta0
    A = math.log(eta0 / const) / math.log(r0)
    return DegreeBound(float(A), beta, r0, const, eta0, radii)


# -- exact k-homogeneity --------------------------------------------------------

def estimate_degree(evaluate, x, samples: int = 64, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    x = np.asarray(x, float)
    n = x.size
    z = rng.normal(size=(samples, n))
    z *= (0.5 / np.linalg.norm(z, axis=1))[:, None]
    a = norms(evaluate(x + z))
    b = norms(evaluate(x + 0.5 * z))
    ok = (a > 1e-12) & (b > 1e-12)
    if not np.any(ok):
        return 1.0
    return float(np.median(np.log(b[ok] / a[ok]) / math.log(0.5)))


def k_homogeneity_check(h, x, V=None, tol: float = 1e-9, degree: Optional[float] = None,
                        samples: int = 1000, radius: float = 0.5, seed: int = 0) -> bool:
    """Sample the scaling and translation identities of a k-homogeneous map.

    ``h`` is anything with an ``at(points)`` method (field, analytic map or
    homogeneous competitor).  Residuals are compared with tol times the
    size of the value at the reference point (or tol when that vanishes).
    """
    x = np.asarray(x, float)
    n = x.size
    frame = _as_frame(V, n)
    if degree is None:
        degree = h.degree if isinstance(h, HomogeneousMap) else estimate_degree(h.at, x, seed=seed)
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(samples, n))
    z *= (radius * rng.uniform(0, 1, samples) ** (1 / n) / np.linalg.norm(z, axis=1))[:, None]
    lam = rng.uniform(0.05, 1.0, samples)
    base = h.at(x + z)
    scale = np.maximum(norms(base), 1.0)
    res = distances(h.at(x + lam[:, None] * z), cone_scales(base, lam ** degree))
    ok = bool(np.all(res <= tol * scale))
    if frame.shape[0]:
        coef = rng.uniform(-radius, radius, (samples, frame.shape[0]))
        v = coef @ frame
        res_t = distances(h.at(x + z + v), base)
        ok = ok and bool(np.all(res_t <= tol * scale))
    return ok
