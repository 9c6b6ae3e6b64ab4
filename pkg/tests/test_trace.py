import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cantortree.boundary import BoundarySpace
from cantortree.errors import ParameterViolation, RegimeViolation
from cantortree.measure import MetricWeights
from cantortree.spaces import BoundaryFunction, TreeFunction, \
    log_function, power_function, recursive_gamma_function
from cantortree.trace import BORDERLINE, CONVERGENT, DIVERGENT, \
    INSUFFICIENT, NOT_APPLICABLE, divergence_verdict, extend, \
    extension_norm_ratio, extension_weights, holder_case, \
    holder_embedding_check, lp_trace_bound, sharp_theta, \
    sharpness_probe_trace2, trace, trace_norm_ratio, trace_report
from cantortree.tree import TreeSpec

LOG2 = math.log(2)
SHARP_WEIGHTS = MetricWeights(LOG2, 1.5 * LOG2)


def test_sharp_theta_and_classification():
    params = sharp_theta(2.0, SHARP_WEIGHTS, 2)
    assert params.sharp == pytest.approx(0.75)
    assert params.classification == 'sharp'
    assert params.trace_admissible and params.extension_admissible
    assert sharp_theta(2.0, SHARP_WEIGHTS, 2, 0.5).classification \
        == 'trace-admissible'
    assert sharp_theta(2.0, SHARP_WEIGHTS, 2, 0.9).classification \
        == 'extension-admissible'
    heavy = sharp_theta(1.0, MetricWeights(LOG2, 3 * LOG2), 2)
    assert not heavy.has_trace_space
    assert heavy.classification == 'no-trace-space'


def test_sharp_theta_needs_a_finite_measure():
    with pytest.raises(ParameterViolation):
        sharp_theta(2.0, MetricWeights(LOG2, LOG2), 2)
    with pytest.raises(ParameterViolation):
        sharp_theta(0.5, SHARP_WEIGHTS, 2)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([2, 3]), st.integers(1, 5), st.integers(0, 5),
       st.integers(0, 10_000))
def test_trace_of_the_extension_is_the_function(branching, depth, m, seed):
    m = min(m, depth)
    weights = MetricWeights(LOG2, math.log(branching) + 0.5)
    space = BoundarySpace.regular(branching, depth, LOG2)
    f = BoundaryFunction.random(space, seed, m)
    u, _ = extend(f, weights)
    assert np.array_equal(trace(u, weights).values, f.cell_values())


def test_trace_of_extended_indicators():
    space = BoundarySpace.regular(3, 3, LOG2)
    for m in range(4):
        for prefix in space.tree.vertices_at_level(m):
            f = BoundaryFunction.indicator(space, prefix)
            u, _ = extend(f, SHARP_WEIGHTS)
            assert np.array_equal(trace(u, SHARP_WEIGHTS).values,
                                  f.cell_values())
            assert u.levels[0][0] == pytest.approx(3.0 ** -m)


def test_extension_of_a_constant_has_no_energy():
    space = BoundarySpace.regular(2, 4, LOG2)
    f = BoundaryFunction.constant(space, 1.5)
    u, g = extend(f, SHARP_WEIGHTS)
    assert all(not np.any(level) for level in g.levels)
    report = extension_norm_ratio(f, SHARP_WEIGHTS,
                                  sharp_theta(2.0, SHARP_WEIGHTS, 2))
    assert report.constant


def test_trace_report_kinds():
    tree = TreeSpec(6, 2)
    weights = MetricWeights(LOG2, math.log(4))
    assert trace_report(TreeFunction.random(tree, 0), weights).kind \
        == 'vertex'
    assert trace_report(log_function(tree, weights), weights).kind \
        == 'unbounded'
    report = trace_report(recursive_gamma_function(tree, weights, 0.2),
                          weights)
    assert report.kind == 'interval'
    assert np.all(report.lower <= report.function.values)
    assert np.all(report.function.values <= report.upper)


def test_distance_from_root_traces_to_a_constant():
    tree = TreeSpec(5, 2)
    u = TreeFunction.distance_from_root(tree, SHARP_WEIGHTS)
    f = trace(u, SHARP_WEIGHTS)
    assert np.allclose(f.values, float(SHARP_WEIGHTS.length(0, 5)))


def test_ratios_outside_their_regime_are_rejected():
    tree = TreeSpec(4, 2)
    u = TreeFunction.random(tree, 0)
    with pytest.raises(RegimeViolation):
        trace_norm_ratio(u, SHARP_WEIGHTS,
                         sharp_theta(2.0, SHARP_WEIGHTS, 2, 0.9))
    f = trace(u, SHARP_WEIGHTS)
    with pytest.raises(RegimeViolation):
        extension_norm_ratio(f, SHARP_WEIGHTS,
                             sharp_theta(2.0, SHARP_WEIGHTS, 2, 0.5))


def test_norm_ratios_stay_bounded_across_depths():
    params = sharp_theta(2.0, SHARP_WEIGHTS, 2)
    extension, tracing = [], []
    for depth in (6, 8, 10):
        space = BoundarySpace.regular(2, depth, LOG2)
        extension.append(max(
            extension_norm_ratio(BoundaryFunction.random(space, seed),
                                 SHARP_WEIGHTS, params).value
            for seed in range(10)
        ))
        tracing.append(max(
            trace_norm_ratio(TreeFunction.random(space.tree, seed),
                             SHARP_WEIGHTS, params).value
            for seed in range(10)
        ))
    for values in (extension, tracing):
        assert all(v > 0 for v in values)
        assert all(v <= values[0] * 1.25 for v in values[1:])


def test_lp_trace_bound_is_finite():
    u = TreeFunction.random(TreeSpec(6, 2), 3)
    report = lp_trace_bound(u, SHARP_WEIGHTS, 2.0)
    assert 0 < report.value < math.inf
    assert report.denominator >= abs(u.levels[0][0])


def test_extension_weights_shape():
    weights = extension_weights(SHARP_WEIGHTS, 2,
                                sharp_theta(2.0, SHARP_WEIGHTS, 2), 6)
    assert weights.shape == (7,)
    assert np.all(weights > 0)


@pytest.mark.parametrize('increments,verdict', [
    ([1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125], CONVERGENT),
    ([1.0] * 6, DIVERGENT),
    ([1.0, 1.0, 1.0], INSUFFICIENT),
    ([1.0, 0.95, 0.9, 0.86, 0.82], BORDERLINE),
])
def test_divergence_verdict(increments, verdict):
    assert divergence_verdict(increments)[0] == verdict


@pytest.mark.parametrize('theta,expected', [
    (0.8, DIVERGENT),
    (0.5, CONVERGENT),
])
def test_sharpness_probe(theta, expected):
    weights = MetricWeights(LOG2, math.log(4))
    report = sharpness_probe_trace2(TreeSpec(10, 2), weights, 2.0, theta,
                                    0.2)
    assert report.expected == expected
    assert report.verdict == expected
    assert report.expected_slope == pytest.approx((LOG2 - 0.2) / LOG2)
    assert report.slope == pytest.approx(report.expected_slope, rel=0.05)


def test_sharpness_probe_rejects_gamma_outside_the_interval():
    weights = MetricWeights(LOG2, math.log(4))
    with pytest.raises(ParameterViolation):
        sharpness_probe_trace2(TreeSpec(6, 2), weights, 2.0, 0.8, 0.5)


def test_holder_cases():
    assert holder_case(2.0, 0.9, 1.0) == ('ii', pytest.approx(0.4))
    assert holder_case(2.0, 1.2, 1.0) == ('iii', 0.25)
    assert holder_case(2.0, 0.8, 0.5) == ('i', 0.5)
    assert holder_case(2.0, 0.3, 1.0) == (None, None)


def test_holder_embedding_verdicts():
    space = BoundarySpace.regular(2, 8, LOG2)
    smooth = holder_embedding_check(power_function(space, 0, 1.0), 2.0, 0.9)
    assert smooth.case == 'ii'
    assert smooth.verdict == 'stable'
    rough = holder_embedding_check(BoundaryFunction.random(space, 0), 2.0,
                                   0.9)
    assert rough.verdict == 'unstable'
    none = holder_embedding_check(BoundaryFunction.random(space, 0), 2.0,
                                  0.3)
    assert none.verdict == NOT_APPLICABLE
