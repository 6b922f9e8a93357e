"""Discrete Dirichlet problem by red-black geodesic relaxation.

Every interior node is replaced by the Frechet mean of its 2n axis
neighbors, which is the exact minimizer of the local edge energy.  Nodes of
one color have no edges between them, so a color can be updated all at once
(and split across threads) without changing the result.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .fields import DomainGrid, MapField, _neighbor_ids, total_energy  # noqa: F401
from .targets import ConicalTarget, PointArray, distances, frechet_means, sq_distances

__all__ = ["SolveReport", "solve_dirichlet", "edge_energy", "total_energy"]

_CHUNK = 4096


@dataclass
class SolveReport:
    sweeps: int
    final_energy: float
    max_last_move: float
    converged: bool
    energies: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "sweeps": self.sweeps,
            "final_energy": self.final_energy,
            "max_last_move": self.max_last_move,
            "converged": self.converged,
        }


class _Stencil:
    """Neighbor tables for the interior nodes of a grid."""

    def __init__(self, grid: DomainGrid):
        self.grid = grid
        n = grid.dim
        offsets = []
        for a in range(n):
            e = np.zeros(n, dtype=np.int64)
            e[a] = 1
            offsets += [e, -e]
        nbr = np.stack([_neighbor_ids(grid, o) for o in offsets], axis=1)
        interior = np.flatnonzero(grid.interior)
        if np.any(nbr[interior] < 0):  # cannot happen for a ball, kept as a guard
            raise RuntimeError("interior node without a full stencil")
        parity = grid.box_index.sum(axis=1) % 2
        self.colors = [interior[parity[interior] == c] for c in (0, 1)]
        self.neighbors = nbr
        # each undirected edge once: the +e_a neighbor of every node
        plus = nbr[:, 0::2]
        src = np.repeat(np.arange(grid.n_nodes), n).reshape(-1, n)
        ok = plus >= 0
        self.edges = (src[ok], plus[ok])


def edge_energy(values: PointArray, stencil: _Stencil) -> float:
    a, b = stencil.edges
    return float(sq_distances(values[a], values[b]).sum())


def _coerce_trace(grid: DomainGrid, target: ConicalTarget, trace) -> PointArray:
    bnd = np.flatnonzero(grid.boundary)
    if callable(trace):
        vals = trace(grid.coords[bnd])
    elif isinstance(trace, dict):
        missing = [int(i) for i in bnd if int(i) not in trace]
        if missing:
            raise ValueError(f"trace misses {len(missing)} boundary nodes, e.g. {missing[:5]}")
        vals = PointArray.from_points([trace[int(i)] for i in bnd], target.flat_dim)
    else:
        vals = trace
    if not isinstance(vals, PointArray) or vals.shape != (bnd.size,):
        got = None if not isinstance(vals, PointArray) else vals.shape[0]
        raise ValueError(f"trace must give {bnd.size} boundary values, got {got}")
    target.validate_array(vals)
    return vals


def _nearest_fill(grid: DomainGrid, values: PointArray, known: np.ndarray) -> PointArray:
    """Copy every unknown node value from the nearest known node."""
    from scipy.spatial import cKDTree

    src = np.flatnonzero(known)
    _, j = cKDTree(grid.coords[src]).query(grid.coords)
    out = values.copy()
    dst = np.flatnonzero(~known)
    out.set(dst, values[src[j[dst]]])
    return out


def _initial_guess(grid, target, bvals, tol, workers, nested):
    bnd = np.flatnonzero(grid.boundary)
    coarse_h = 2 * grid.spacing
    if nested and coarse_h <= grid.radius / 8 * (1 + 1e-12):
        coarse = DomainGrid(grid.dim, grid.center, grid.radius, coarse_h)
        from scipy.spatial import cKDTree

        cb = np.flatnonzero(coarse.boundary)
        _, j = cKDTree(grid.coords[bnd]).query(coarse.coords[cb])
        cfield, _ = solve_dirichlet(coarse, target, bvals[j], tol=4 * tol,
                                    workers=workers, nested=True)
        guess = cfield.at(grid.coords)
    else:
        guess = PointArray.cone(grid.n_nodes, target.flat_dim)
        guess.set(bnd, bvals)
        guess = _nearest_fill(grid, guess, grid.boundary)
    guess.set(bnd, bvals)
    return guess


def solve_dirichlet(grid: DomainGrid, target: ConicalTarget,
                    trace: Union[PointArray, dict, Callable],
                    tol: Optional[float] = None, max_sweeps: int = 100_000,
                    workers: int = 1, nested: bool = True,
                    initial: Optional[PointArray] = None):
    """Energy-minimizing field with prescribed values on the boundary nodes.

    Parameters
    ----------
    grid, target
        Domain lattice and target complex.
    trace
        Boundary values in ascending boundary-node order (a ``PointArray``),
        a dict keyed by node id, or a callable on boundary coordinates.
    tol
        Stop once no node moves farther than this in a sweep.  Defaults to
        1e-8 times the diameter of the boundary values.
    workers
        Threads per color update.  The result does not depend on it.
    nested
        Start from the interpolated solution on the grid of twice the spacing.

    Returns
    -------
    (MapField, SolveReport)
    """
    bvals = _coerce_trace(grid, target, trace)
    if tol is None:
        tol = 1e-8 * max(_diameter(bvals), 1e-300)
    if not tol > 0:
        raise ValueError("tol must be positive")
    stencil = _Stencil(grid)
    if initial is not None:
        values = initial.copy()
        values.set(np.flatnonzero(grid.boundary), bvals)
    else:
        values = _initial_guess(grid, target, bvals, tol, workers, nested)

    energies = [edge_energy(values, stencil)]
    last_move = math.inf
    sweeps = 0
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while sweeps < max_sweeps:
            move = 0.0
            for nodes in stencil.colors:
                move = max(move, _relax(values, nodes, stencil, target, pool))
            sweeps += 1
            e = edge_energy(values, stencil)
            if e > energies[-1] * (1 + 1e-12) + 1e-300:
                raise AssertionError(
                    f"energy increased in sweep {sweeps}: {energies[-1]!r} -> {e!r}")
            energies.append(e)
            last_move = move
            if move <= tol:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    out = MapField(grid, target, values, "solved")
    report = SolveReport(sweeps, float(total_energy(out)), float(last_move),
                         bool(last_move <= tol), energies)
    return out, report


def _relax(values: PointArray, nodes, stencil, target, pool) -> float:
    if nodes.size == 0:
        return 0.0
    chunks = [nodes[i:i + _CHUNK] for i in range(0, nodes.size, _CHUNK)]

    def update(chunk):
        nb = values[stencil.neighbors[chunk]]
        return frechet_means(nb, 1.0, target.ray_count)

    results = list(pool.map(update, chunks)) if pool is not None else [update(c) for c in chunks]
    move = 0.0
    for chunk, new in zip(chunks, results):
        move = max(move, float(distances(values[chunk], new).max()))
        values.set(chunk, new)
    return move


def _diameter(vals: PointArray) -> float:
    """Upper estimate of the diameter of a point set (via the cone point)."""
    if len(vals) == 0:
        return 0.0
    flat = vals.flat
    spread = np.ptp(flat, axis=0) if flat.shape[-1] else np.zeros(0)
    return float(np.sqrt((spread ** 2).sum()) + 2 * vals.radial.max())
