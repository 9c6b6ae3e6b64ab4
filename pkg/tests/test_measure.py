import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cantortree.errors import NotAnUpperGradientError, ParameterViolation
from cantortree.measure import LARGE_RADIUS, NEAR_ROOT, SMALL_RADIUS, \
    MetricWeights, TreePoint, WeightedTree, algebraic_envelope, \
    ball_sample_grid, cone_mass, gauss_integrate, metric_distance, \
    nested_ball_samples, random_vertex
from cantortree.spaces import EdgeGradient, TreeFunction, \
    minimal_upper_gradient
from cantortree.tree import ROOT, HashedBranching, TreeSpec, Vertex, \
    common_prefix_levels

LOG2 = math.log(2)
LOG3 = math.log(3)
LOG4 = math.log(4)


@pytest.fixture
def weighted():
    return WeightedTree(TreeSpec(6, 2), MetricWeights(LOG2, LOG4))


def test_total_measure_of_the_binary_tree():
    tree = WeightedTree(TreeSpec(6, 2), MetricWeights(LOG2, LOG4))
    assert tree.total_measure() == pytest.approx(3 / LOG4, rel=1e-12)
    assert tree.total_measure(include_tail=False) < 3 / LOG4


def test_measure_needs_beta_above_log_k():
    tree = WeightedTree(TreeSpec(4, 2), MetricWeights(LOG2, LOG2))
    with pytest.raises(ParameterViolation) as info:
        tree.ball_measure(TreePoint.root(), 0.5)
    assert info.value.interval == (LOG2, math.inf)


def test_metric_distance_between_siblings():
    weights = MetricWeights(LOG2, LOG4)
    a, b = TreePoint(Vertex((0, 0))), TreePoint(Vertex((0, 1)))
    assert metric_distance(a, b, weights) == pytest.approx(
        2 * float(weights.length(1, 2))
    )
    assert metric_distance(TreePoint.root(), a, weights) == pytest.approx(
        (1 - 0.25) / LOG2
    )


def test_root_point_ignores_the_fraction():
    assert TreePoint(ROOT, 0.3).fraction == 1.0
    assert TreePoint(Vertex((1,)), 0.25).level == 0.25


def test_half_ball_of_full_reach_is_the_whole_subtree(weighted):
    z = Vertex((1, 0))
    report = weighted.half_ball_measure(z, math.exp(-LOG2 * 2) / LOG2)
    assert report.measure == pytest.approx(
        cone_mass(2, math.inf, 2, weighted.weights), rel=1e-12
    )
    assert report.rho > 40


@pytest.mark.parametrize('vertex,fraction,radius', [
    ((), 1.0, 0.3),
    ((0, 1), 0.5, 0.8),
    ((1, 1, 0, 1), 0.2, 0.05),
    ((1, 0, 0), 1.0, 2.5),
])
def test_ball_measure_matches_the_edge_pieces(weighted, vertex, fraction,
                                              radius):
    x = TreePoint(Vertex(vertex), fraction)
    exact = weighted.ball_measure(x, radius, include_tail=False).measure
    pieces = weighted.ball_pieces(x, radius)
    total = sum(
        float(np.sum(weighted.weights.mass(lo[hi > lo], hi[hi > lo])))
        for lo, hi in pieces[1:]
    )
    assert exact == pytest.approx(total, rel=1e-9)


SUBDIVISIONS = 2 ** 10


def riemann_ball_measure(tree, weights, x, r):
    """Ball mass as a sum over 2^10 cells per edge.

    Cells the sphere cuts are bisected down to the crossing level.
    """
    branching, depth = tree.branching, tree.depth
    levels = np.concatenate([np.full(branching ** n, n)
                             for n in range(1, depth + 1)])
    indices = np.concatenate([np.arange(branching ** n)
                              for n in range(1, depth + 1)])
    meet = common_prefix_levels(levels, indices, x.vertex.level,
                                tree.index_of(x.vertex), branching)
    on_ray = meet == np.minimum(levels, x.vertex.level)

    def distance(t, rows):
        along = np.abs(weights.length(x.level, t))
        around = weights.length(meet[rows], t) \
            + weights.length(meet[rows], x.level)
        return np.where(on_ray[rows], along, around)

    grid = levels[:, None] - 1 + np.linspace(0.0, 1.0, SUBDIVISIONS + 1)
    rows = np.broadcast_to(np.arange(len(levels))[:, None], grid.shape)
    inside = distance(grid, rows) <= r
    lo, hi = grid[:, :-1], grid[:, 1:]
    whole = inside[:, :-1] & inside[:, 1:]
    total = float(np.sum(weights.mass(lo[whole], hi[whole])))

    cut = inside[:, :-1] != inside[:, 1:]
    start, stop, cut_rows = lo[cut], hi[cut], rows[:, :-1][cut]
    from_start = inside[:, :-1][cut]
    near = np.where(from_start, start, stop)
    far = np.where(from_start, stop, start)
    for _ in range(60):
        middle = (near + far) / 2
        hit = distance(middle, cut_rows) <= r
        near = np.where(hit, middle, near)
        far = np.where(hit, far, middle)
    total += float(np.sum(weights.mass(
        np.where(from_start, start, near), np.where(from_start, near, stop)
    )))
    return total


@pytest.mark.parametrize('epsilon,beta', [(LOG2, LOG4), (LOG3, LOG3)])
def test_ball_measure_matches_a_riemann_sum(epsilon, beta):
    tree = TreeSpec(8, 2)
    weighted = WeightedTree(tree, MetricWeights(epsilon, beta))
    rng = np.random.default_rng(8)
    for _ in range(100):
        vertex = random_vertex(tree, rng, int(rng.integers(0, 9)))
        x = TreePoint(vertex, int(rng.integers(1, SUBDIVISIONS + 1))
                      / SUBDIVISIONS)
        r = float(rng.uniform(0.02, 1.0)) * weighted.weights.diameter
        exact = weighted.ball_measure(x, r, include_tail=False).measure
        assert exact == pytest.approx(
            riemann_ball_measure(tree, weighted.weights, x, r), rel=1e-6
        )


def test_regimes(weighted):
    assert weighted.regime(TreePoint.root(), 0.1)[0] == NEAR_ROOT
    deep = TreePoint(Vertex((0, 0, 0, 0)))
    assert weighted.regime(deep, 0.01)[0] == SMALL_RADIUS
    assert weighted.regime(deep, 1.0)[0] == LARGE_RADIUS


def test_large_radii_are_clamped(weighted):
    report = weighted.ball_measure(TreePoint.root(), 100.0)
    assert report.clamped
    assert report.radius == 2 * weighted.weights.diameter
    assert report.measure == pytest.approx(weighted.total_measure())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_doubling_ratio_is_bounded(seed):
    weighted = WeightedTree(TreeSpec(8, 2), MetricWeights(LOG2, LOG4))
    for x, r in ball_sample_grid(weighted.tree, weighted.weights, seed, 1):
        ratio = weighted.doubling_ratio(x, r)
        assert 1 <= ratio < 64


def test_nonregular_tree_reports_a_bracket():
    tree = TreeSpec(5, rule=HashedBranching(2, 3, salt=1))
    weighted = WeightedTree(tree, MetricWeights(LOG2, math.log(8)))
    x = TreePoint(random_vertex(tree, np.random.default_rng(0), 3), 0.5)
    report = weighted.ball_measure(x, 0.6)
    assert math.isnan(report.measure)
    assert 0 < report.lower <= report.upper


def test_dimension_statistic_is_positive(weighted):
    samples = nested_ball_samples(weighted.tree, weighted.weights, seed=3)
    report = weighted.dimension_condition_check(samples, s_prime=1.7)
    assert report.s == 2.0
    assert report.statistic > 0
    assert report.statistic_prime <= report.statistic
    assert report.samples == len(samples)


def test_sample_grid_shape(weighted):
    grid = ball_sample_grid(weighted.tree, weighted.weights, 5, 4)
    assert len(grid) == 4 * 2 * (weighted.tree.depth + 1)
    for x, r in grid:
        weighted.tree.validate(x.vertex)
        assert r > 0


def test_poincare_constant_of_a_constant_function(weighted):
    u = TreeFunction.constant(weighted.tree, 2.0)
    g = EdgeGradient.zero(weighted.tree)
    report = weighted.poincare_check(u, g, TreePoint(Vertex((0,))), 1.0)
    assert report.constant == 0.0
    assert report.mean == pytest.approx(2.0)


def test_poincare_with_minimal_gradients(weighted):
    for seed in range(5):
        u = TreeFunction.random(weighted.tree, seed)
        g = minimal_upper_gradient(u, weighted.weights)
        for x, r in ball_sample_grid(weighted.tree, weighted.weights, seed,
                                     2):
            report = weighted.poincare_check(u, g, x, r, p=1.0)
            assert 0 <= report.constant < 50


def test_zero_gradient_on_a_varying_function_is_rejected(weighted):
    u = TreeFunction.random(weighted.tree, 0)
    with pytest.raises(NotAnUpperGradientError):
        weighted.poincare_check(
            u, EdgeGradient.zero(weighted.tree), TreePoint.root(), 2.0
        )


def test_gauss_rule_is_exact_for_polynomials():
    value = gauss_integrate(lambda s: s ** 5, np.array([0.0]), np.array([2.0]))
    assert value[0] == pytest.approx(64 / 6)


def test_algebraic_envelope():
    assert algebraic_envelope(2.0, 0.5) == (0.5, 0.75, 1.0)
    with pytest.raises(ParameterViolation):
        algebraic_envelope(1.0, 1.5)
