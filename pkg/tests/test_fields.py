import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harmstrat.fields import (DomainGrid, MapField, boundary_trace, energy_density,
                              eval_tripod, example_map, pod_map, total_energy, tripod_map)
from harmstrat.targets import cone_scale, cone_scales, distance, distances, make_target


def test_grid_requires_resolved_ball():
    with pytest.raises(ValueError):
        DomainGrid(2, (0.0, 0.0), 1.0, 0.2)
    g = DomainGrid(2, (0.0, 0.0), 1.0, 1 / 8)
    assert g.n_nodes == int((np.linalg.norm(g.coords, axis=1) <= 1 + 1e-12).sum())


def test_grid_coordinates_are_reproducible():
    a = DomainGrid(2, (0.1, -0.2), 1.0, 1 / 16)
    b = DomainGrid.from_json(a.to_json())
    assert np.array_equal(a.coords, b.coords)
    assert a.node_at(a.coords[17]) == 17


def test_tripod_homogeneity_is_exact():
    rng = np.random.default_rng(1)
    t = make_target(0, 3)
    for _ in range(50):
        z = rng.normal(size=2)
        lam = rng.uniform(0.1, 3)
        lhs = eval_tripod(lam * z)
        rhs = cone_scale(t, eval_tripod(z), lam ** 1.5)
        assert distance(t, lhs, rhs) <= 1e-12 * max(1, rhs.radial)


def test_tripod_is_continuous_across_sector_boundaries():
    rng = np.random.default_rng(2)
    rho = rng.uniform(0.1, 1, 1000)
    edge = rng.integers(0, 3, 1000) * (2 * math.pi / 3) + math.pi / 3
    eps = 1e-9
    a = np.c_[rho * np.cos(edge - eps), rho * np.sin(edge - eps)]
    b = np.c_[rho * np.cos(edge + eps), rho * np.sin(edge + eps)]
    assert distances(tripod_map(a), tripod_map(b)).max() < 1e-7


def test_jsonl_round_trip(tmp_path, tripod):
    path = tmp_path / "f.jsonl"
    tripod.to_jsonl(path, header={"tag": "x"})
    back = MapField.from_jsonl(path)
    assert distances(back.values, tripod.values).max() == 0
    assert np.array_equal(back.grid.coords, tripod.grid.coords)


def test_solved_fields_do_not_extrapolate(solved_tripod):
    f, _ = solved_tripod
    with pytest.raises(ValueError):
        f.at(np.array([[1.5, 0.0]]))


def test_energy_density_converges_linearly():
    # tripod density is (9/4) |z| (the pod part scales like |z|^(3/2))
    errs = []
    for h in (1 / 16, 1 / 32, 1 / 64):
        g = DomainGrid(2, (0.0, 0.0), 1.0, h)
        f = MapField.from_analytic(g, example_map("tripod"))
        node = g.node_at((0.5, 0.25))
        exact = 9 / 4 * math.hypot(0.5, 0.25)
        errs.append(abs(energy_density(f, node) - exact))
    assert errs[1] <= errs[0] * 0.6 + 1e-12 and errs[2] <= errs[1] * 0.6 + 1e-12


def test_total_energy_of_linear_map():
    g = DomainGrid(2, (0.0, 0.0), 1.0, 1 / 64)
    f = MapField.from_analytic(g, example_map("linear", 2))
    assert total_energy(f) == pytest.approx(math.pi, rel=0.02)


def test_boundary_trace_matches_boundary_nodes(tripod):
    ids, vals = boundary_trace(tripod)
    assert np.array_equal(ids, np.flatnonzero(tripod.grid.boundary))
    assert len(vals) == ids.size


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 6), st.floats(0.05, 2), st.floats(-math.pi, math.pi))
def test_pod_map_scaling(m, lam, theta):
    z = np.array([[math.cos(theta), math.sin(theta)]])
    a = pod_map(lam * z, m)
    b = cone_scales(pod_map(z, m), lam ** (m / 2))
    assert distances(a, b).max() <= 1e-12 * max(1.0, lam ** (m / 2))
