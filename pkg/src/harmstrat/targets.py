"""Metric geometry of conical targets of the form R^j x (m-pod).

A point of the target is a flat coordinate vector together with a position
on the pod: a ray index and a distance along that ray.  The pod cone point
has no ray.  In array form the cone point is stored with ray index ``-1``.

Everything here is closed form: distances, geodesics, scalings about the
cone point and weighted barycenters (Frechet means).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

CONE = -1


@dataclass(frozen=True)
class ConicalTarget:
    """The complex R^j x Pod_m with its cone point at the origin.

    Parameters
    ----------
    flat_dim : int
        Dimension j of the Euclidean factor.
    ray_count : int
        Number of rays m of the pod factor. Must be 0 or at least 3;
        use :func:`make_target` to fold a 2-pod into the flat factor.
    """

    flat_dim: int = 0
    ray_count: int = 0

    def __post_init__(self):
        if int(self.flat_dim) != self.flat_dim or self.flat_dim < 0:
            raise ValueError(f"flat_dim must be a nonnegative integer, got {self.flat_dim}")
        m = self.ray_count
        if int(m) != m or m < 0:
            raise ValueError(f"ray_count must be a nonnegative integer, got {m}")
        if m in (1, 2):
            raise ValueError(
                f"ray_count={m} is not a branched pod; use make_target to normalize it"
            )

    @property
    def total_dim(self) -> int:
        return self.flat_dim + (1 if self.ray_count > 0 else 0)

    @property
    def has_pod(self) -> bool:
        return self.ray_count > 0

    def origin(self) -> "TargetPoint":
        """The cone point 0_X."""
        return TargetPoint(tuple([0.0] * self.flat_dim), None, 0.0)

    def validate(self, p: "TargetPoint") -> None:
        if len(p.flat) != self.flat_dim:
            raise ValueError(
                f"point has {len(p.flat)} flat coordinates, target expects {self.flat_dim}"
            )
        if p.ray is not None and not (0 <= p.ray < self.ray_count):
            raise ValueError(f"ray index {p.ray} out of range for a {self.ray_count}-pod")

    def validate_array(self, a: "PointArray") -> None:
        if a.flat.shape[-1] != self.flat_dim:
            raise ValueError(
                f"points have {a.flat.shape[-1]} flat coordinates, target expects {self.flat_dim}"
            )
        if a.ray.size and (a.ray.max() >= self.ray_count or a.ray.min() < CONE):
            raise ValueError("ray index out of range for target")

    def to_json(self) -> dict:
        return {"flat_dim": int(self.flat_dim), "ray_count": int(self.ray_count)}

    @classmethod
    def from_json(cls, d: dict) -> "ConicalTarget":
        return make_target(int(d["flat_dim"]), int(d["ray_count"]))


def make_target(flat_dim: int, ray_count: int) -> ConicalTarget:
    """Build a target, folding a 2-pod into an extra flat coordinate.

    A 2-pod is isometric to a line.  Its chart sends ray 0 to the positive
    half-line and ray 1 to the negative half-line, appended as the last
    flat coordinate (see :func:`two_pod_chart`).
    """
    if ray_count == 1:
        raise ValueError("a 1-pod is a half-line, not a conical F-connected target")
    if ray_count == 2:
        return ConicalTarget(flat_dim + 1, 0)
    return ConicalTarget(flat_dim, ray_count)


def two_pod_chart(flat: Sequence[float], ray: Optional[int], radial: float) -> "TargetPoint":
    """Map a point of R^j x Pod_2 to the normalized target R^(j+1)."""
    sign = {None: 0.0, 0: 1.0, 1: -1.0}[ray]
    return TargetPoint(tuple(flat) + (sign * radial,), None, 0.0)


@dataclass(frozen=True)
class TargetPoint:
    """A single point: flat coordinates, optional ray index, radial distance."""

    flat: tuple = ()
    ray: Optional[int] = None
    radial: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "flat", tuple(float(v) for v in self.flat))
        r = float(self.radial)
        if not np.isfinite(r) or r < 0:
            raise ValueError(f"radial coordinate must be finite and >= 0, got {self.radial}")
        object.__setattr__(self, "radial", r)
        if r == 0.0:
            object.__setattr__(self, "ray", None)
        elif self.ray is None or self.ray < 0:
            raise ValueError("a point with positive radial coordinate needs a ray index")
        else:
            object.__setattr__(self, "ray", int(self.ray))

    @property
    def is_cone(self) -> bool:
        return self.ray is None

    def to_json(self) -> dict:
        return {"flat": list(self.flat), "ray": self.ray, "radial": self.radial}

    @classmethod
    def from_json(cls, d: dict) -> "TargetPoint":
        return cls(tuple(d.get("flat", ())), d.get("ray"), d.get("radial", 0.0))


class PointArray:
    """A batch of target points with arbitrary leading shape.

    Attributes
    ----------
    flat : ndarray, shape (..., j)
    ray : ndarray of int, shape (...); ``-1`` marks the cone point
    radial : ndarray, shape (...)
    """

    __slots__ = ("flat", "ray", "radial")

    def __init__(self, flat, ray, radial):
        self.flat = np.asarray(flat, dtype=float)
        self.ray = np.asarray(ray, dtype=np.int64)
        self.radial = np.asarray(radial, dtype=float)
        if self.ray.shape != self.radial.shape or self.flat.shape[:-1] != self.radial.shape:
            raise ValueError("inconsistent shapes in PointArray")

    @property
    def shape(self):
        return self.radial.shape

    def __len__(self):
        return self.radial.shape[0]

    def __getitem__(self, idx) -> "PointArray":
        return PointArray(self.flat[idx], self.ray[idx], self.radial[idx])

    def point(self, i) -> TargetPoint:
        r = float(self.radial[i])
        ray = int(self.ray[i])
        return TargetPoint(tuple(self.flat[i]), None if ray < 0 or r == 0 else ray, r)

    def to_points(self) -> list:
        return [self.point(i) for i in range(len(self))]

    def copy(self) -> "PointArray":
        return PointArray(self.flat.copy(), self.ray.copy(), self.radial.copy())

    def reshape(self, shape) -> "PointArray":
        shape = tuple(shape)
        return PointArray(
            self.flat.reshape(shape + (self.flat.shape[-1],)),
            self.ray.reshape(shape),
            self.radial.reshape(shape),
        )

    def set(self, idx, other: "PointArray") -> None:
        self.flat[idx] = other.flat
        self.ray[idx] = other.ray
        self.radial[idx] = other.radial

    @classmethod
    def from_points(cls, points: Iterable[TargetPoint], flat_dim: Optional[int] = None):
        points = list(points)
        if flat_dim is None:
            flat_dim = len(points[0].flat) if points else 0
        flat = np.array([p.flat for p in points], dtype=float).reshape(len(points), flat_dim)
        ray = np.array([CONE if p.ray is None else p.ray for p in points], dtype=np.int64)
        radial = np.array([p.radial for p in points], dtype=float)
        return cls(flat, ray, radial)

    @classmethod
    def cone(cls, shape, flat_dim: int):
        shape = tuple(np.atleast_1d(shape)) if np.ndim(shape) else (int(shape),)
        return cls(np.zeros(shape + (flat_dim,)), np.full(shape, CONE), np.zeros(shape))

    @classmethod
    def concat(cls, arrays: Sequence["PointArray"]) -> "PointArray":
        return cls(
            np.concatenate([a.flat for a in arrays]),
            np.concatenate([a.ray for a in arrays]),
            np.concatenate([a.radial for a in arrays]),
        )

    @classmethod
    def stack(cls, arrays: Sequence["PointArray"], axis=-1) -> "PointArray":
        fa = axis if axis >= 0 else axis - 1
        return cls(
            np.stack([a.flat for a in arrays], axis=fa),
            np.stack([a.ray for a in arrays], axis=axis),
            np.stack([a.radial for a in arrays], axis=axis),
        )


def _as_array(p) -> PointArray:
    if isinstance(p, PointArray):
        return p
    if isinstance(p, TargetPoint):
        return PointArray.from_points([p])[0]
    raise TypeError(f"expected TargetPoint or PointArray, got {type(p).__name__}")


def _tidy(flat, ray, radial) -> PointArray:
    radial = np.where(radial > 0, radial, 0.0)
    ray = np.where(radial > 0, ray, CONE)
    return PointArray(flat, ray, radial)


# -- vectorized primitives ---------------------------------------------------

def pod_distance_arrays(ray_a, rad_a, ray_b, rad_b):
    """Tree distance on the pod; the cone point carries ray -1 and radial 0."""
    return np.where(ray_a == ray_b, np.abs(rad_a - rad_b), rad_a + rad_b)


def sq_distances(a: PointArray, b: PointArray) -> np.ndarray:
    """Elementwise squared distance between two broadcastable point batches."""
    diff = a.flat - b.flat
    flat2 = np.einsum("...i,...i->...", diff, diff) if diff.shape[-1] else np.zeros(
        np.broadcast(a.radial, b.radial).shape
    )
    pod = pod_distance_arrays(a.ray, a.radial, b.ray, b.radial)
    return flat2 + pod * pod


def distances(a: PointArray, b: PointArray) -> np.ndarray:
    return np.sqrt(sq_distances(a, b))


def norms(a: PointArray) -> np.ndarray:
    """Distance of every point to the cone point 0_X."""
    flat2 = np.einsum("...i,...i->...", a.flat, a.flat) if a.flat.shape[-1] else 0.0
    return np.sqrt(flat2 + a.radial * a.radial)


def geodesics(a: PointArray, b: PointArray, lam) -> PointArray:
    """Points at parameter ``lam`` along the geodesics from ``a`` to ``b``."""
    lam = np.asarray(lam, dtype=float)
    flat = a.flat + lam[..., None] * (b.flat - a.flat)
    eff_a = np.where(a.ray < 0, b.ray, a.ray)
    eff_b = np.where(b.ray < 0, a.ray, b.ray)
    same = eff_a == eff_b
    r_same = (1.0 - lam) * a.radial + lam * b.radial
    s = lam * (a.radial + b.radial) - a.radial
    radial = np.where(same, r_same, np.abs(s))
    ray = np.where(same, eff_a, np.where(s < 0, a.ray, b.ray))
    return _tidy(flat, ray, radial)


def cone_scales(a: PointArray, factor) -> PointArray:
    factor = np.asarray(factor, dtype=float)
    if np.any(factor < 0):
        raise ValueError("cone scaling factor must be nonnegative")
    return _tidy(a.flat * factor[..., None], a.ray, a.radial * factor)


def frechet_means(points: PointArray, weights, ray_count: int) -> PointArray:
    """Weighted Frechet means along the last axis of ``points``.

    ``points`` has shape (..., K); ``weights`` broadcasts against it.  The
    flat part is the weighted average.  On the pod the mean sits on the ray
    with the largest positive pull, or at the cone point if no pull is
    positive.
    """
    w = np.broadcast_to(np.asarray(weights, dtype=float), points.radial.shape)
    total_w = w.sum(axis=-1)
    if np.any(total_w <= 0):
        raise ValueError("weights must have a positive sum")
    flat = np.einsum("...k,...ki->...i", w, points.flat) / total_w[..., None]
    shape = total_w.shape
    if ray_count == 0:
        return PointArray(flat, np.full(shape, CONE), np.zeros(shape))
    wr = w * points.radial
    total = wr.sum(axis=-1)
    best = np.full(shape, -np.inf)
    best_ray = np.full(shape, CONE, dtype=np.int64)
    for ell in range(ray_count):
        on = np.where(points.ray == ell, wr, 0.0).sum(axis=-1)
        pull = (2.0 * on - total) / total_w
        better = pull > best
        best = np.where(better, pull, best)
        best_ray = np.where(better, ell, best_ray)
    return _tidy(flat, best_ray, np.where(best > 0, best, 0.0))


# -- single-point API ----------------------------------------------------------

def distance(t: ConicalTarget, a: TargetPoint, b: TargetPoint) -> float:
    """Distance in R^j x Pod_m."""
    t.validate(a)
    t.validate(b)
    return float(distances(_as_array(a), _as_array(b)))


def geodesic_point(t: ConicalTarget, a: TargetPoint, b: TargetPoint, lam: float) -> TargetPoint:
    """Point at parameter ``lam`` in [0, 1] on the geodesic from ``a`` to ``b``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"geodesic parameter must lie in [0, 1], got {lam}")
    t.validate(a)
    t.validate(b)
    if lam == 0.0:
        return a
    if lam == 1.0:
        return b
    return _single(geodesics(_as_array(a), _as_array(b), np.float64(lam)))


def _single(a: PointArray) -> TargetPoint:
    r = float(a.radial)
    ray = int(a.ray)
    return TargetPoint(tuple(np.atleast_1d(a.flat)) if a.flat.size else (), None if ray < 0 else ray, r)


def cone_scale(t: ConicalTarget, p: TargetPoint, factor: float) -> TargetPoint:
    """Scale ``p`` by ``factor`` about the cone point."""
    if factor < 0:
        raise ValueError("cone scaling factor must be nonnegative")
    t.validate(p)
    return TargetPoint(tuple(factor * v for v in p.flat), p.ray, factor * p.radial)


def frechet_mean(t: ConicalTarget, points: Sequence[TargetPoint], weights: Sequence[float]) -> TargetPoint:
    """Unique minimizer of the weighted sum of squared distances."""
    points = list(points)
    if not points:
        raise ValueError("frechet_mean needs at least one point")
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(points),):
        raise ValueError("need one weight per point")
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with a positive sum")
    for p in points:
        t.validate(p)
    arr = PointArray.from_points(points, t.flat_dim)
    return _single(frechet_means(arr, w, t.ray_count))


def lies_in_flat(t: ConicalTarget, points: Sequence[TargetPoint]) -> Optional[np.ndarray]:
    """Isometric chart of the points into R^total_dim, or None.

    A chart exists iff the pod parts touch at most two rays; the first used
    ray maps to the positive half-line and the second to the negative one.
    """
    points = list(points)
    if not points:
        raise ValueError("lies_in_flat needs a nonempty point list")
    arr = PointArray.from_points(points, t.flat_dim)
    return chart_array(t, arr)


def chart_array(t: ConicalTarget, arr: PointArray) -> Optional[np.ndarray]:
    if not t.has_pod:
        return arr.flat.copy()
    used = np.unique(arr.ray[arr.radial > 0])
    if used.size > 2:
        return None
    signed = np.zeros(arr.radial.shape)
    if used.size >= 1:
        signed = np.where(arr.ray == used[0], arr.radial, signed)
    if used.size == 2:
        signed = np.where(arr.ray == used[1], -arr.radial, signed)
    return np.concatenate([arr.flat, signed[..., None]], axis=-1)
