import math

import numpy as np
import pytest

from harmstrat.covering import (CoveringAssertionError, OrderCache, generation_radius,
                                initial_cover, iterate_refine, minkowski_estimate,
                                packing_measure, refine_cover, tube_volume)
from harmstrat.fields import MapField, example_map


def test_empty_set_gives_the_trivial_cover(tripod):
    cov = initial_cover(tripod, [], [0, 0], 1 / 8, 1 / 32, k=0)
    assert cov.to_json() == [{"center": [0.0, 0.0], "radius": 0.125, "label": "terminal",
                              "generation": 0}]
    assert cov.packing_ratio == 1.0
    assert len(refine_cover(tripod, [], [0, 0], 1 / 8, 1 / 32, 0)) == 1


def test_parameter_ranges(tripod):
    node = [tripod.grid.node_at((0.0, 0.0))]
    with pytest.raises(ValueError):
        initial_cover(tripod, node, [0, 0], 1 / 8, 1 / 32, rho=1 / 100)
    with pytest.raises(ValueError):
        initial_cover(tripod, node, [0, 0], 1 / 4, 1 / 32)
    with pytest.raises(ValueError):
        initial_cover(tripod, node, [0, 0], 1 / 8, 1 / 4)
    with pytest.raises(ValueError):
        initial_cover(tripod, [tripod.grid.node_at((0.5, 0.0))], [0, 0], 1 / 8, 1 / 32)


def test_generation_schedule_is_exact():
    assert generation_radius(1 / 8, 1 / 256, 0) == 1 / 8
    assert generation_radius(1 / 8, 1 / 256, 2) == (1 / 8) * (10 / 256) ** 2


def test_tripod_cover(tripod):
    node = [tripod.grid.node_at((0.0, 0.0))]
    cov = initial_cover(tripod, node, [0, 0], 1 / 8, 1 / 64, k=0)
    assert cov.report["ok"] and len(cov) == 1
    assert cov.balls[0].radius == generation_radius(1 / 8, 1 / 256, 1)
    ref = refine_cover(tripod, node, [0, 0], 1 / 8, 1 / 64, 0)
    assert ref.report["ok"] and len(ref) <= 10


def test_product_covers(product_factor, product_cover_nodes):
    orders = OrderCache(product_factor)
    covers = [initial_cover(product_factor, product_cover_nodes, np.zeros(3), 1 / 8, s, k=1,
                            orders=orders) for s in (1 / 32, 1 / 64)]
    assert all(c.report["ok"] and c.report["fifth_disjoint"] for c in covers)
    assert covers[0].packing_ratio == pytest.approx(covers[1].packing_ratio, rel=1.0)
    ref = refine_cover(product_factor, product_cover_nodes, np.zeros(3), 1 / 8, 1 / 32, 1,
                       orders=orders)
    assert ref.report["ok"] and ref.report["branches"]["small"] == len(ref)


def test_order_drop_branch_on_the_product_map(product, product_cover_nodes):
    # measured against the cone point, the flat factor lowers the order away from t = 0
    ref = refine_cover(product, product_cover_nodes, np.zeros(3), 1 / 8, 1 / 32, 1)
    assert ref.report["ok"]
    assert ref.report["branches"]["order_drop"] > 0
    assert ref.report["pieces_with_order_drop"] > 0


def test_iteration_respects_its_round_bound(product_factor, product_cover_nodes):
    balls, rounds, M = iterate_refine(product_factor, product_cover_nodes, np.zeros(3), 1 / 32, 1)
    assert 1 <= rounds <= math.ceil(M / 0.05)
    assert all(b.radius == 1 / 32 for b in balls)


def test_good_ball_assertion_fires_on_a_scattered_set(product_factor):
    g = product_factor.grid
    axis = [g.node_at((t, 0.0, 0.0)) for t in (-2 / 32, 0.0, 2 / 32)]
    stray = [g.node_at((0.0, 1 / 32, 0.0))]
    with pytest.raises(CoveringAssertionError) as err:
        initial_cover(product_factor, axis + stray, np.zeros(3), 1 / 8, 1 / 32, k=1)
    assert err.value.ball is not None


def test_packing_measure(tripod):
    node = [tripod.grid.node_at((0.0, 0.0))]
    cov = refine_cover(tripod, node, [0, 0], 1 / 8, 1 / 64, 0)
    mu = packing_measure(cov)
    assert len(mu) == 1 and mu.masses[0] == 1.0
    mu1 = packing_measure(cov, k=1)
    assert mu1.masses[0] == pytest.approx(1 / 64)


def test_tube_volume_of_a_point():
    assert tube_volume(np.zeros((1, 2)), 0.25, 0.25 / 64) == pytest.approx(math.pi / 16, rel=0.01)
    assert tube_volume(np.zeros((0, 2)), 0.25, 0.01) == 0.0


def test_minkowski_of_an_empty_stratum(linear):
    table = minkowski_estimate(linear, 0, 0.05, [1 / 8, 1 / 16, 1 / 32],
                               stratum=np.zeros(0, dtype=np.int64))
    assert np.all(table.tube_volume == 0) and np.all(table.cover_bound == 0)
    with pytest.raises(ValueError):
        minkowski_estimate(linear, 0, 0.05, [linear.spacing / 2], stratum=[])


def test_minkowski_table_csv(tmp_path, tripod_fine):
    table = minkowski_estimate(tripod_fine, 0, 0.05, [1 / 8, 1 / 16, 1 / 32])
    table.to_csv(tmp_path / "m.csv", header="h")
    assert abs(table.slope - 2) <= 0.2
    assert (tmp_path / "m.csv").read_text().count("\n") == 6
