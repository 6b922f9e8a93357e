import numpy as np
import pytest

from harmstrat.fields import DomainGrid, MapField, example_map
from harmstrat.solver import solve_dirichlet
from harmstrat.targets import PointArray, distances, make_target


def _tripod_solve(h, **kw):
    g = DomainGrid(2, (0.0, 0.0), 1.0, h)
    amap = example_map("tripod")
    f, rep = solve_dirichlet(g, amap.target, lambda c: amap.at(c), **kw)
    exact = MapField.from_analytic(g, amap)
    return f, rep, float(distances(f.values, exact.values).max())


def test_error_decreases_with_spacing():
    errs = [_tripod_solve(h)[2] for h in (1 / 16, 1 / 32)]
    assert errs[1] < errs[0]


def test_error_decreases_at_the_finest_spacing(solved_tripod, grid2):
    f, _ = solved_tripod
    exact = MapField.from_analytic(grid2, example_map("tripod"))
    fine = float(distances(f.values, exact.values).max())
    assert fine < _tripod_solve(1 / 32)[2]


def test_energy_never_increases(solved_tripod):
    _, rep = solved_tripod
    e = np.asarray(rep.energies)
    assert np.all(np.diff(e) <= 1e-12 * e[:-1])
    assert rep.converged


def test_images_stay_in_the_boundary_hull():
    g = DomainGrid(2, (0.0, 0.0), 1.0, 1 / 16)
    target = make_target(0, 3)
    bnd = np.flatnonzero(g.boundary)
    theta = np.arctan2(g.coords[bnd, 1], g.coords[bnd, 0])
    ray = np.where(theta > 0, 0, 2)           # ray 1 never used on the boundary
    trace = PointArray(np.zeros((bnd.size, 0)), ray, 0.5 + 0.5 * np.abs(np.sin(theta)))
    f, _ = solve_dirichlet(g, target, trace)
    used = set(np.unique(f.values.ray[f.values.radial > 0]).tolist())
    assert used <= {0, 2}
    assert f.values.radial.max() <= trace.radial.max() + 1e-12


def test_workers_do_not_change_the_result():
    a, _, _ = _tripod_solve(1 / 16, workers=1, nested=False)
    b, _, _ = _tripod_solve(1 / 16, workers=3, nested=False)
    assert np.array_equal(a.values.radial, b.values.radial)
    assert np.array_equal(a.values.ray, b.values.ray)


def test_trace_validation():
    g = DomainGrid(2, (0.0, 0.0), 1.0, 1 / 8)
    target = make_target(0, 3)
    with pytest.raises(ValueError):
        solve_dirichlet(g, target, PointArray(np.zeros((3, 0)), np.zeros(3, int), np.ones(3)))
    with pytest.raises(ValueError):
        solve_dirichlet(g, target, {0: None})
