import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cantortree.boundary import BoundarySpace
from cantortree.errors import ParameterViolation, UnsupportedError, \
    ValidationError
from cantortree.measure import MetricWeights, TreePoint, WeightedTree, \
    cone_mass
from cantortree.spaces import BesovParams, BoundaryFunction, TreeFunction, \
    besov_norm, besov_report, besov_scale, besov_seminorm_double_integral, \
    besov_seminorm_sum, energy_report, ep_at_level, gamma_interval, \
    holder_seminorm, layer_average, level_pair_sum, log_function, lp_norm, \
    minimal_upper_gradient, newtonian_energy, power_function, \
    RadialFunction, recursive_gamma_function, subset_ratio, tree_lp_norm
from cantortree.tree import HashedBranching, TreeSpec, Vertex

LOG2 = math.log(2)


@pytest.fixture
def space():
    return BoundarySpace.regular(2, 6, LOG2)


def brute_pair_sum(f: BoundaryFunction, level: int, p: float) -> float:
    classes = f.values.reshape(f.space.branching ** level, -1)
    return sum(
        abs(a - b) ** p
        for row in classes for a, b in itertools.product(row, row)
    )


def test_boundary_function_shape_is_checked(space):
    with pytest.raises(ValidationError):
        BoundaryFunction(space, [1.0, 2.0, 3.0])
    with pytest.raises(ValidationError):
        BoundaryFunction(space, [1.0, math.nan])
    f = BoundaryFunction(space, [1.0, 2.0, 3.0, 4.0])
    assert f.resolution == 2
    assert f.value('101111') == 3.0
    assert len(f.cell_values()) == 64


def test_serialized_function_parses_back(space):
    f = BoundaryFunction.random(space, 4, resolution=3)
    g = BoundaryFunction.parse(f.serialize(), space)
    assert g.resolution == 3
    assert np.array_equal(g.values, f.values)


@pytest.mark.parametrize('p', [1.0, 2.0, 3.0])
def test_level_pair_sums_match_brute_force(space, p):
    f = BoundaryFunction.random(space, 11)
    for level in range(space.depth):
        total, sampled = level_pair_sum(f, level, p)
        assert not sampled
        assert total == pytest.approx(brute_pair_sum(f, level, p),
                                      rel=1e-10)


def test_modulus_of_an_indicator(space):
    f = BoundaryFunction.indicator(space, Vertex((0,)))
    for p in (1.0, 2.0):
        assert ep_at_level(f, 0, p)[0] == pytest.approx(0.5 ** (1 / p))
        assert ep_at_level(f, 1, p)[0] == 0.0


def test_constant_functions_have_zero_seminorm(space):
    f = BoundaryFunction.constant(space, 3.0)
    params = BesovParams(2.0, 0.5)
    assert besov_report(f, params).value == 0.0
    assert besov_seminorm_double_integral(f, params) == 0.0
    assert besov_norm(f, params) == pytest.approx(3.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1.0, 2.0, 3.0]),
       st.floats(0.1, 1.5))
def test_sum_and_double_integral_forms_are_comparable(seed, p, theta):
    space = BoundarySpace.regular(2, 5, LOG2)
    f = BoundaryFunction.random(space, seed)
    params = BesovParams(p, theta)
    ratio = (besov_seminorm_sum(f, params)
             / besov_seminorm_double_integral(f, params)) ** p
    decay = math.exp(-LOG2 * theta * p)
    assert decay * (1 - 1e-9) <= ratio
    assert ratio <= decay / (1 - 1 / (2 * math.exp(LOG2 * theta * p))) \
        * (1 + 1e-9)


def test_besov_report_keeps_the_last_increments(space):
    report = besov_report(BoundaryFunction.random(space, 2),
                          BesovParams(2.0, 0.5))
    assert len(report.rows) == space.depth + 1
    assert report.last_increments == report.increments[-3:]
    assert report.value ** 2 == pytest.approx(sum(report.increments))
    assert report.rows[1][1] == besov_scale(space, 1) == 2 / LOG2


def test_power_function_modulus_slope():
    space = BoundarySpace.regular(2, 12, LOG2)
    alpha, p = 0.3, 2.0
    f = power_function(space, 0, alpha, p)
    levels = range(1, 7)
    t = [besov_scale(space, n) for n in levels]
    e = [ep_at_level(f, n, p)[0] for n in levels]
    slope = np.polyfit(np.log(t), np.log(e), 1)[0]
    expected = (space.hausdorff_dimension() + alpha * p) / p
    assert slope == pytest.approx(expected, rel=0.05)


def test_power_exponent_must_keep_the_function_integrable(space):
    with pytest.raises(ParameterViolation):
        power_function(space, 0, -0.6, 2.0)


def test_layer_average_and_norms(space):
    f = BoundaryFunction(space, [1.0, -1.0, 3.0, 5.0])
    average = layer_average(f, 1)
    assert average.values.tolist() == [0.0, 4.0]
    assert lp_norm(f, 1) == pytest.approx(2.5)
    assert lp_norm(average, 2) == pytest.approx(math.sqrt(8))
    with pytest.raises(ValidationError):
        layer_average(f, 3)


def test_subset_ratio_rejects_reversed_parameters(space):
    f = BoundaryFunction.random(space, 1)
    assert subset_ratio(f, BesovParams(2.0, 0.8), BesovParams(1.0, 0.5)) > 0
    with pytest.raises(ParameterViolation):
        subset_ratio(f, BesovParams(2.0, 0.5), BesovParams(1.0, 0.8))


def test_besov_parameters_are_validated():
    with pytest.raises(UnsupportedError):
        BesovParams(2.0, 0.5, q=3.0)
    with pytest.raises(ParameterViolation):
        BesovParams(0.5, 0.5)
    with pytest.raises(ParameterViolation):
        BesovParams(2.0, 0.0)


def test_holder_seminorm_of_an_indicator(space):
    f = BoundaryFunction.indicator(space, Vertex((1,)))
    assert holder_seminorm(f, 0.5) == pytest.approx(
        1 / (2 / LOG2) ** 0.5
    )


def test_distance_from_root_has_unit_gradient():
    tree = TreeSpec(5, 3)
    weights = MetricWeights(LOG2, math.log(9))
    u = TreeFunction.distance_from_root(tree, weights)
    g = minimal_upper_gradient(u, weights)
    for j in range(1, tree.depth + 1):
        assert np.allclose(g.levels[j], 1.0)
    expected = sum(3 ** j * float(weights.mass(j - 1, j))
                   for j in range(1, tree.depth + 1))
    assert newtonian_energy(u, 2.0, weights) == pytest.approx(expected)


def test_lp_norm_of_a_constant_on_the_tree():
    tree = TreeSpec(4, 2)
    weights = MetricWeights(LOG2, math.log(3))
    u = TreeFunction.constant(tree, 2.0)
    total = WeightedTree(tree, weights).total_measure()
    assert tree_lp_norm(u, 2.0, weights) == pytest.approx(
        2.0 * math.sqrt(total), rel=1e-10
    )
    assert tree_lp_norm(u, 2.0, weights, include_tail=False) < \
        2.0 * math.sqrt(total)


def test_tree_function_is_linear_along_edges():
    tree = TreeSpec(3, 2)
    weights = MetricWeights(LOG2, math.log(3))
    u = TreeFunction.distance_from_root(tree, weights)
    point = TreePoint(Vertex((1, 0)), 0.5)
    assert u.evaluate(point, weights) == pytest.approx(
        float(weights.length(0, point.level))
    )


def test_log_function_dichotomy():
    weights = MetricWeights(LOG2, math.log(8))
    tree = TreeSpec(40, 2)
    u = log_function(tree, weights)
    assert u.values[-1] == pytest.approx(math.log(41))
    threshold = (weights.beta - LOG2) / weights.epsilon
    bounded = energy_report(u, threshold - 0.5, weights)
    assert bounded.tail < 1e-6
    growing = energy_report(u, threshold + 1.0, weights)
    assert math.isinf(growing.tail)
    assert np.all(np.diff(growing.partial_sums) > 0)


def test_recursive_gamma_function_gradient_is_minimal():
    weights = MetricWeights(LOG2, math.log(4))
    tree = TreeSpec(8, 2)
    u = recursive_gamma_function(tree, weights, 0.2, p=2.0)
    minimal = minimal_upper_gradient(u, weights)
    for j in range(1, tree.depth + 1):
        assert np.allclose(u.gradient.levels[j], minimal.levels[j])
    lower, upper = u.limit_bounds()
    assert np.all(upper - lower > 0)
    assert float(np.max(upper)) <= u.bound * (1 + 1e-12)
    assert u.value(Vertex((0,) * 8)) == pytest.approx(
        sum(math.exp((0.2 - LOG2) * j) for j in range(8))
    )


def test_gamma_interval():
    weights = MetricWeights(LOG2, math.log(4))
    assert gamma_interval(weights, 2, 2.0) == pytest.approx((0.0, LOG2 / 2))
    low, _ = gamma_interval(weights, 2, 2.0, theta=0.9)
    assert low == pytest.approx(LOG2 * 0.1)
    with pytest.raises(ParameterViolation):
        recursive_gamma_function(TreeSpec(4, 2), weights, 0.5, p=2.0)


def test_energy_needs_p_at_least_one():
    weights = MetricWeights(LOG2, math.log(4))
    u = TreeFunction.random(TreeSpec(3, 2), 0)
    with pytest.raises(ParameterViolation):
        energy_report(u, 0.5, weights)


def test_cone_mass_is_additive():
    weights = MetricWeights(LOG2, math.log(3))
    whole = cone_mass(1, math.inf, 2, weights)
    assert cone_mass(1, 4.5, 2, weights) < whole
    assert cone_mass(1, 1.0, 2, weights) == 0.0


def test_radial_energy_tail_continues_the_series():
    weights = MetricWeights(LOG2, math.log(4))
    tree = TreeSpec(6, 2)
    u = RadialFunction(tree, np.arange(7.0), gradient=np.ones(7))
    report = energy_report(u, 2.0, weights)
    assert report.tail == pytest.approx(
        2 ** 6 * cone_mass(6, math.inf, 2, weights), rel=1e-12
    )
    assert report.tail == pytest.approx(report.terms[-1], rel=1e-12)

    steep = RadialFunction(tree, np.arange(7.0),
                           gradient=np.power(3.0, np.arange(7)))
    assert math.isinf(steep.energy_tail(1.0, weights))
    flat = RadialFunction(tree, np.zeros(7), gradient=np.zeros(7))
    assert flat.energy_tail(2.0, weights) == 0.0
    with pytest.raises(ValidationError):
        RadialFunction(tree, np.zeros(7)).energy_tail(2.0, weights)


@pytest.mark.parametrize('vertex,fraction,radius', [
    ((), 1.0, 0.7),
    ((0,), 1.0, 1.2),
    ((0, 0, 0), 0.5, 0.3),
    ((0, 0, 0, 0), 0.25, 2.5),
])
def test_mixed_branching_lies_between_the_regular_trees(vertex, fraction,
                                                        radius):
    weights = MetricWeights(LOG2, math.log(8))
    mixed = WeightedTree(TreeSpec(6, rule=HashedBranching(2, 3, salt=1)),
                         weights)
    chain = WeightedTree(TreeSpec(6, 1), weights)
    full = WeightedTree(TreeSpec(6, 3), weights)
    x = TreePoint(Vertex(vertex), fraction)

    ball = mixed.ball_measure(x, radius)
    assert math.isnan(ball.measure)
    assert chain.ball_measure(x, radius).measure \
        <= ball.lower * (1 + 1e-12)
    assert ball.lower <= ball.upper
    assert ball.upper \
        <= full.ball_measure(x, radius).measure * (1 + 1e-12)

    z = Vertex(vertex)
    half = mixed.half_ball_measure(z, radius)
    assert half.lower == pytest.approx(
        chain.half_ball_measure(z, radius).measure
    )
    assert half.upper == pytest.approx(
        full.half_ball_measure(z, radius).measure
    )


def test_function_spaces_refuse_mixed_branching():
    tree = TreeSpec(4, rule=HashedBranching(2, 3, salt=1))
    with pytest.raises(UnsupportedError):
        BoundaryFunction.random(BoundarySpace(tree, LOG2), 0)
    with pytest.raises(UnsupportedError):
        TreeFunction.random(tree, 0)
