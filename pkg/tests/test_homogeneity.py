import math

import numpy as np
import pytest

from harmstrat import frequency as F
from harmstrat import homogeneity as H
from harmstrat.fields import DomainGrid, MapField, example_map


def test_tripod_is_homogeneous(tripod):
    v = H.homogeneity_test(tripod, [0, 0], 0.5, 0, 0.01)
    assert v.passed and v.best_discrepancy <= 1e-9
    assert v.passed == (v.best_discrepancy <= v.threshold)


def test_tripod_is_not_one_homogeneous(tripod):
    v = H.homogeneity_test(tripod, [0, 0], 0.5, 1, 0.1)
    assert not v.passed
    assert v.passed == (v.best_discrepancy <= v.threshold)


def test_product_factor_is_one_homogeneous(product_factor):
    assert H.homogeneity_test(product_factor, [0, 0, 0], 0.5, 1, 0.1).passed


def test_dictionary_entries_are_exactly_homogeneous(tripod, product_factor):
    for f, x, k in ((tripod, [0, 0], 0), (tripod, [0, 0], 1), (product_factor, [0, 0, 0], 1)):
        for hmap in H.competitor_dictionary(f, x, 0.5, k):
            assert H.k_homogeneity_check(hmap, x, hmap.frame, samples=200)


def test_symmetrize_gradient_bound(tripod, linear, product_factor):
    for f, x in ((tripod, [0, 0]), (linear, [0, 0]), (product_factor, [0, 0, 0])):
        order = max(F.smoothed_order_value(f, x, 0.5), 1.0)  # quadrature gives 0.99997 for u = x1
        h = H.symmetrize(f, x, order, None, 0.5, check_gradient=True)
        assert h.gradient_ratio <= 1.1


def test_homogeneity_is_scale_consistent(tripod):
    small = H.homogeneity_test(tripod, [0, 0], 0.25, 1, 0.1)
    blown = F.rescale(tripod, [0, 0], 0.25)
    big = H.homogeneity_test(blown, [0, 0], 1.0, 1, 0.1)
    norm_small = small.best_discrepancy / math.sqrt(F.smoothed_order(tripod, [0, 0], 0.25)[1] / 0.25)
    norm_big = big.best_discrepancy / math.sqrt(F.smoothed_order(blown, [0, 0], 1.0)[1])
    assert small.passed == big.passed
    assert norm_small == pytest.approx(norm_big, abs=1e-6)


def test_homogeneous_map_identities():
    amap = example_map("tripod")
    h = H.HomogeneousMap(1.5, np.zeros((0, 2)), lambda d: amap.at(d), np.zeros(2),
                         amap.target)
    assert H.k_homogeneity_check(h, [0, 0], degree=1.5)
    with pytest.raises(ValueError):
        H.HomogeneousMap(0.5, np.zeros((0, 2)), amap.at, np.zeros(2), amap.target)


def test_degree_bound_on_normalized_tripod(grid2):
    bound = H.degree_bound(_phi_normalized(grid2, example_map("tripod")))
    assert bound.A >= 1.5
    assert 0 < bound.r0 < 1


def _phi_normalized(grid, amap):
    from harmstrat.fields import AnalyticMap
    from harmstrat.targets import cone_scales

    f = MapField.from_analytic(grid, amap)
    i_phi = F.smoothed_order(f, [0, 0], 1.0)[1]
    c = i_phi ** -0.5
    return MapField.from_analytic(grid, AnalyticMap("tripod_unit", 2, amap.target,
                                                    lambda p: cone_scales(amap.at(p), c)))


def test_degree_bound_requires_normalization(tripod):
    with pytest.raises(ValueError):
        H.degree_bound(tripod)
