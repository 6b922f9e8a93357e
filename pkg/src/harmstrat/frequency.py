"""Energy, height and frequency (order) functions with their smoothed variants.

Conventions
-----------
``E(x, r)``      energy in the ball B_r(x)
``I(x, r)``      integral of d^2(u(y), u(x)) over the sphere of radius r
``Ord(x, r)``    r E / I
``E_phi``        energy weighted by the cutoff phi(|y - x| / r), where phi is 1
                 on [0, 1/2] and 2 - 2t on [1/2, 1]
``I_phi``        integral of 2 d^2(u(y), 0) / |y - x| over the annulus
                 r/2 < |y - x| < r (the cutoff derivative is the constant -2)
``Ord_phi``      r E_phi / I_phi

Analytic fields are integrated on a lattice centered at x whose spacing is a
fixed fraction of r, so homogeneous maps give scale independent values.
Solved fields are integrated through their geodesic interpolant.
"""
from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .fields import AnalyticMap, DomainGrid, MapField, _difference_density
from .targets import PointArray, cone_scales, distances, norms, sq_distances

# lattice points per radius for analytic quadrature
ANALYTIC_RESOLUTION = {2: 128, 3: 20}
MIN_HEIGHT_RADIUS = 4  # in units of the grid spacing
MIN_ORDER_RADIUS = 8
DEGENERATE = 1e-14
MAX_ORDER = 1e8


def _degenerate(height_value: float, r: float, energy_value: float) -> bool:
    """True when the height vanishes (or is negligible against r E)."""
    return not height_value > 0 or r * energy_value > MAX_ORDER * height_value


class DegenerateOrder(ValueError):
    """Raised when the height vanishes and the order is undefined."""


def cutoff(t):
    """The piecewise linear cutoff: 1 on [0, 1/2], 2 - 2t on [1/2, 1], 0 after."""
    t = np.asarray(t, float)
    return np.clip(2.0 - 2.0 * t, 0.0, 1.0)


_SUBSAMPLE = {2: 12, 3: 6}


def _ramp(rho, radius, q):
    """Smoothed indicator of {rho < radius} with transition width q."""
    return np.clip((radius - rho) / q + 0.5, 0.0, 1.0)


@functools.lru_cache(maxsize=256)
def _unit_cell_weights(dim: int, half_width: int, radius_units: float) -> np.ndarray:
    """Ball-cell overlap fractions on the lattice Z^dim cut to [-half_width, half_width]."""
    ax = np.arange(-half_width, half_width + 1, dtype=float)
    mesh = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), -1).reshape(-1, dim)
    rho = np.sqrt((mesh * mesh).sum(-1))
    w = (rho < radius_units).astype(float)
    band = np.flatnonzero(np.abs(rho - radius_units) < 0.5 * math.sqrt(dim))
    if band.size:
        s = _SUBSAMPLE[dim]
        sub_ax = (np.arange(s) + 0.5) / s - 0.5
        sub = np.stack(np.meshgrid(*([sub_ax] * dim), indexing="ij"), -1).reshape(-1, dim)
        for lo in range(0, band.size, 2048):
            part = band[lo:lo + 2048]
            rel = mesh[part][:, None, :] + sub[None]
            w[part] = (np.sqrt((rel * rel).sum(-1)) < radius_units).mean(axis=1)
    w.setflags(write=False)
    return w


def _inside(lat: "_Lattice", center, radius) -> np.ndarray:
    """Fraction of each lattice cell lying in the ball B_radius(center).

    Cells far from the sphere get 0 or 1; cells cut by it are supersampled.
    """
    units = round(radius / lat.spacing, 9)
    return _unit_cell_weights(lat.points.shape[1], lat.half_width, units)[lat.keep]


# -- quadrature lattices ------------------------------------------------------

SOLVED_RESOLUTION = 32


def default_spacing(f: MapField, r: float) -> float:
    """Quadrature spacing at radius r.

    Analytic fields use a fixed fraction of r.  Solved fields are integrated
    through their interpolant on a lattice no coarser than the grid and no
    coarser than r / 32, which keeps small balls well resolved.
    """
    if f.is_analytic:
        return r / ANALYTIC_RESOLUTION[f.dim]
    return min(f.spacing, r / SOLVED_RESOLUTION)

@dataclass
class _Lattice:
    points: np.ndarray  # (N, n)
    rho: np.ndarray     # distances to the center
    spacing: float
    keep: Optional[np.ndarray] = None     # selected entries of the full cube lattice
    half_width: int = 0
    density: Optional[np.ndarray] = None
    values: Optional[PointArray] = None


def _check_ball(f: MapField, x, r, min_units: float, *, pad: float = 0.0):
    x = np.asarray(x, float)
    if x.shape != (f.dim,):
        raise ValueError(f"center must have {f.dim} coordinates")
    if not r > 0:
        raise ValueError("radius must be positive")
    if not f.is_analytic and r < min_units * f.spacing * (1 - 1e-9):
        raise ValueError(f"radius {r} is below {min_units} grid spacings")
    # analytic formulas are defined everywhere, so only solved fields are confined
    if not f.is_analytic and not f.grid.contains_ball(x, r, margin=pad):
        raise ValueError(f"ball B_{r}({tuple(x)}) leaves the grid")
    return x


def _lattice(f: MapField, x, r, spacing: Optional[float] = None, need_density=True) -> _Lattice:
    """Quadrature nodes covering the closed ball B_r(x) (plus a half-cell)."""
    n = f.dim
    q = spacing if spacing is not None else default_spacing(f, r)
    k = int(math.ceil(r / q + 1))
    ax = np.arange(-k, k + 1) * q
    mesh = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), -1).reshape(-1, n)
    rho = np.linalg.norm(mesh, axis=1)
    keep = rho <= r + q
    pts = x + mesh[keep]
    lat = _Lattice(pts, rho[keep], q, keep, k)
    lat.values = f.at(lat.points)
    if need_density:
        step = q / 2 if f.is_analytic else q
        lat.density = _difference_density(f.at, lat.points, step, n)
    return lat


# -- energies and heights -----------------------------------------------------

def energy(f: MapField, x, r, *, spacing=None) -> float:
    """Dirichlet energy of the field in B_r(x)."""
    x = _check_ball(f, x, r, MIN_ORDER_RADIUS, pad=_pad(f))
    lat = _lattice(f, x, r, spacing)
    w = _inside(lat, x, r)
    return float((w * lat.density).sum() * lat.spacing ** f.dim)


def smoothed_energy(f: MapField, x, r, *, spacing=None, _lat=None) -> float:
    x = np.asarray(x, float)
    lat = _lat or _lattice(f, x, r, spacing)
    return float((cutoff(lat.rho / r) * lat.density).sum() * lat.spacing ** f.dim)


def smoothed_height(f: MapField, x, r, *, spacing=None, _lat=None) -> float:
    x = np.asarray(x, float)
    lat = _lat or _lattice(f, x, r, spacing, need_density=False)
    q = lat.spacing
    shell = _inside(lat, x, r) - _inside(lat, x, r / 2)
    d2 = norms(lat.values) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(shell > 0, 2.0 * d2 / lat.rho, 0.0)
    return float((shell * integrand).sum() * q ** f.dim)


def sphere_rule(dim: int, r: float, resolution: int):
    """Nodes (unit vectors) and weights of a quadrature rule on the sphere of radius r."""
    if dim == 2:
        theta = 2 * np.pi * np.arange(resolution) / resolution
        dirs = np.stack([np.cos(theta), np.sin(theta)], -1)
        w = np.full(resolution, 2 * np.pi * r / resolution)
        return dirs, w
    if dim == 3:
        n_lat = max(8, resolution // 2)
        cz, wz = np.polynomial.legendre.leggauss(n_lat)
        phi = 2 * np.pi * np.arange(resolution) / resolution
        cz_g, phi_g = np.meshgrid(cz, phi, indexing="ij")
        sz = np.sqrt(1 - cz_g ** 2)
        dirs = np.stack([sz * np.cos(phi_g), sz * np.sin(phi_g), cz_g], -1).reshape(-1, 3)
        w = (wz[:, None] * np.full(resolution, 2 * np.pi / resolution)[None, :]).reshape(-1)
        return dirs, w * r * r
    raise ValueError("sphere rules exist for dimension 2 and 3")


def _sphere_resolution(f: MapField, r: float) -> int:
    if f.is_analytic:
        return 512 if f.dim == 2 else 96
    per = 4.0 if f.dim == 2 else 2.0
    res = int(math.ceil(per * 2 * np.pi * r / f.spacing))
    return max(64 if f.dim == 2 else 32, min(res, 4096 if f.dim == 2 else 256))


def height(f: MapField, x, r) -> float:
    """Integral of d^2(u(y), u(x)) over the sphere of radius r about x."""
    x = _check_ball(f, x, r, MIN_HEIGHT_RADIUS)
    dirs, w = sphere_rule(f.dim, r, _sphere_resolution(f, r))
    vals = f.at(x + r * dirs)
    center = f.at(x[None, :])
    d2 = sq_distances(vals, PointArray(np.broadcast_to(center.flat, vals.flat.shape),
                                       np.broadcast_to(center.ray, vals.ray.shape),
                                       np.broadcast_to(center.radial, vals.radial.shape)))
    return float((w * d2).sum())


def _pad(f: MapField) -> float:
    return 0.0 if f.is_analytic else 2 * f.spacing


def order(f: MapField, x, r) -> float:
    """The frequency r E(x, r) / I(x, r)."""
    e = energy(f, x, r)
    i = height(f, x, r)
    if _degenerate(i, r, e):
        raise DegenerateOrder(f"height {i:.3e} vanishes at r={r}; order undefined")
    return r * e / i


def smoothed_order(f: MapField, x, r, *, spacing=None):
    """Return ``(E_phi, I_phi, Ord_phi)`` at (x, r).

    ``spacing`` overrides the quadrature lattice spacing (for solved fields
    the lattice is then evaluated through the interpolant, which permits
    radii below eight grid spacings).
    """
    if spacing is None:
        x = _check_ball(f, x, r, MIN_ORDER_RADIUS, pad=_pad(f))
    else:
        x = _check_ball(f, x, r, 0, pad=spacing)
    lat = _lattice(f, x, r, spacing)
    e = smoothed_energy(f, x, r, _lat=lat)
    i = smoothed_height(f, x, r, _lat=lat)
    if _degenerate(i, r, e):
        raise DegenerateOrder(f"smoothed height {i:.3e} vanishes at r={r}; order undefined")
    return e, i, r * e / i


def smoothed_order_value(f: MapField, x, r, **kw) -> float:
    return smoothed_order(f, x, r, **kw)[2]


def pinching(f: MapField, x, s, r, **kw) -> float:
    """W_s^r(x) = Ord_phi(x, r) - Ord_phi(x, s)."""
    if not s < r:
        raise ValueError("need s < r")
    return smoothed_order_value(f, x, r, **kw) - smoothed_order_value(f, x, s, **kw)


def height_identity_residual(f: MapField, x, s, r, points: int = 32) -> float:
    """Relative residual of the smoothed height identity between radii s < r.

    The identity relates s^(1-n) I_phi(s) to r^(1-n) I_phi(r) through the
    exponential of -2 times the integral of Ord_phi(t) dt / t.
    """
    if not s < r:
        raise ValueError("need s < r")
    n = f.dim
    ts = np.geomspace(s, r, points)
    profile = [smoothed_order(f, x, t) for t in ts]
    ords = np.array([p[2] for p in profile])
    logs = np.log(ts)
    integral = float(np.sum(0.5 * (ords[1:] + ords[:-1]) * np.diff(logs)))
    lhs = s ** (1 - n) * profile[0][1]
    rhs = r ** (1 - n) * profile[-1][1] * math.exp(-2 * integral)
    return abs(lhs - rhs) / lhs


def _radial_energy_term(f: MapField, x, r, lat: _Lattice) -> float:
    """Integral of |d_nu u|^2 |y - x| phi'(|y - x| / r) over the ball."""
    q = lat.spacing
    shell = _inside(lat, x, r) - _inside(lat, x, r / 2)
    sel = shell > 0
    pts = lat.points[sel]
    rel = pts - x
    rho = lat.rho[sel]
    nu = rel / rho[:, None]
    eps = q / 2 if f.is_analytic else f.spacing
    d2 = sq_distances(f.at(pts + eps * nu), f.at(pts - eps * nu)) / (2 * eps) ** 2
    return float((shell[sel] * d2 * rho * -2.0).sum() * q ** f.dim)


def energy_derivative_residual(f: MapField, x, r) -> float:
    """Relative residual of the radial derivative formula for E_phi.

    Compares a central difference of E_phi in r with
    (n - 2) / r E_phi - 2 / r^2 times the radial energy term.
    """
    n = f.dim
    x = _check_ball(f, x, r + f.spacing, MIN_ORDER_RADIUS, pad=_pad(f))
    step = f.spacing
    lhs = (smoothed_energy(f, x, r + step) - smoothed_energy(f, x, r - step)) / (2 * step)
    lat = _lattice(f, x, r)
    e = smoothed_energy(f, x, r, _lat=lat)
    rhs = (n - 2) / r * e - 2.0 / r ** 2 * _radial_energy_term(f, x, r, lat)
    scale = max(abs(lhs), abs(rhs))
    return 0.0 if scale < DEGENERATE else abs(lhs - rhs) / scale


def order_doubling_ratio(f: MapField, x, y, r) -> float:
    """Ord_phi(y, r) / (Ord_phi(x, 16 r) + 1) for y in B_{r/4}(x)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.linalg.norm(y - x) > r / 4 * (1 + 1e-12):
        raise ValueError("y must lie in B_{r/4}(x)")
    return smoothed_order_value(f, y, r) / (smoothed_order_value(f, x, 16 * r) + 1.0)


def order_at_zero(f: MapField, x):
    """Ord_phi at the smallest admissible radius and a Richardson estimate of the limit."""
    r0 = MIN_ORDER_RADIUS * f.spacing
    a = smoothed_order_value(f, x, r0)
    b = smoothed_order_value(f, x, 2 * r0)
    return a, 2 * a - b


# -- profiles -----------------------------------------------------------------

@dataclass
class FrequencyProfile:
    center: tuple
    radii: list
    E: list = field(default_factory=list)
    I: list = field(default_factory=list)
    Ord: list = field(default_factory=list)
    E_phi: list = field(default_factory=list)
    I_phi: list = field(default_factory=list)
    Ord_phi: list = field(default_factory=list)

    COLUMNS = ("r", "E", "I", "Ord", "E_phi", "I_phi", "Ord_phi")

    def rows(self):
        return list(zip(self.radii, self.E, self.I, self.Ord, self.E_phi, self.I_phi, self.Ord_phi))

    def max_violation(self) -> float:
        """Largest decrease of Ord_phi between consecutive radii."""
        o = np.asarray(self.Ord_phi)
        return float(max(0.0, -(np.diff(o)).min())) if o.size > 1 else 0.0

    def to_csv(self, path, header: Optional[str] = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])


def frequency_profile(f: MapField, x, radii: Sequence[float]) -> FrequencyProfile:
    radii = sorted(float(r) for r in radii)
    prof = FrequencyProfile(tuple(float(v) for v in x), radii)
    for r in radii:
        e = energy(f, x, r)
        i = height(f, x, r)
        prof.E.append(e)
        prof.I.append(i)
        prof.Ord.append(math.nan if _degenerate(i, r, e) else r * e / i)
        ep, ip, op = smoothed_order(f, x, r)
        prof.E_phi.append(ep)
        prof.I_phi.append(ip)
        prof.Ord_phi.append(op)
    return prof


def smoothed_order_ladder(f: MapField, x, radii) -> np.ndarray:
    return np.array([smoothed_order_value(f, x, r) for r in radii])


# -- rescalings and tangent maps ---------------------------------------------

def homogeneous_extension(base: AnalyticMap, degree: float, name=None) -> AnalyticMap:
    """The degree-homogeneous map agreeing with ``base`` on the unit sphere."""

    def func(p):
        rho = np.linalg.norm(p, axis=1)
        safe = np.where(rho > 0, rho, 1.0)
        vals = base.at(p / safe[:, None])
        return cone_scales(vals, np.where(rho > 0, rho ** degree, 0.0))

    return AnalyticMap(name or f"{base.name}_hom{degree:g}", base.dim, base.target, func)


def _require_cone(f: MapField, x, cone_tol):
    d = float(norms(f.at(np.asarray(x, float)[None, :]))[0])
    tol = cone_tol if cone_tol is not None else 1e-6 * max(float(f.cone_distance().max()), 1.0)
    if d > tol:
        raise ValueError(f"u(x) is at distance {d:.3e} from the cone point; rescaling undefined")


def rescale_factor(f: MapField, x, lam: float) -> float:
    i = height(f, x, lam)
    if not i > 0:
        raise DegenerateOrder("height vanishes; cannot normalize")
    return (lam ** (1 - f.dim) * i) ** -0.5


def rescale(f: MapField, x, lam: float, out_spacing: Optional[float] = None,
            cone_tol: Optional[float] = None) -> MapField:
    """Blow-up of the field at x by the factor lam, normalized to unit height.

    The result lives on the unit ball.  Analytic fields give analytic
    results; solved fields are sampled through the interpolant on a grid
    of spacing ``out_spacing`` (default: the input spacing).
    """
    x = np.asarray(x, float)
    if not lam > 0:
        raise ValueError("lam must be positive")
    _require_cone(f, x, cone_tol)
    if not f.is_analytic and not f.grid.contains_ball(x, lam):
        raise ValueError("the ball B_lam(x) leaves the grid")
    c = rescale_factor(f, x, lam)
    h = out_spacing or f.spacing
    grid = DomainGrid(f.dim, (0.0,) * f.dim, 1.0, min(h, 1 / 8))
    if f.is_analytic:
        base = f.analytic

        def func(p, base=base, x=x, lam=lam, c=c):
            return cone_scales(base.at(x + lam * p), c)

        amap = AnalyticMap(f"{base.name}@{lam:g}", f.dim, f.target, func)
        return MapField.from_analytic(grid, amap)
    vals = cone_scales(f.at(x + lam * grid.coords), c)
    return MapField(grid, f.target, vals, "solved")


@dataclass
class TangentDiagnostic:
    lambdas: list
    cauchy: list          # sup distance between consecutive rescalings
    threshold: float
    converged: bool

    def decreasing(self, slack: float = 0.0) -> bool:
        c = np.asarray(self.cauchy)
        return bool(np.all(np.diff(c) <= slack))


def tangent_map(f: MapField, x, ladder: Sequence[float], threshold: float = 0.05,
                out_spacing: Optional[float] = None):
    """Rescale along a decreasing ladder and measure consecutive sup distances."""
    ladder = [float(v) for v in ladder]
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("ladder must be strictly decreasing")
    fields = [rescale(f, x, lam, out_spacing) for lam in ladder]
    cauchy = [float(distances(a.values, b.values).max()) for a, b in zip(fields, fields[1:])]
    conv = bool(cauchy and cauchy[-1] <= threshold) or len(fields) == 1
    return fields[-1], TangentDiagnostic(ladder, cauchy, threshold, conv)
