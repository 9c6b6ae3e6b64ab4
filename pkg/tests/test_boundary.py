import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cantortree.boundary import BoundarySpace
from cantortree.errors import InvalidVertexError, ParameterViolation, \
    SameCellError, UnsupportedError, ValidationError
from cantortree.tree import HashedBranching, TreeSpec, Vertex, comb_distances

LOG2 = math.log(2)
LOG3 = math.log(3)


def test_split_level_and_distance():
    space = BoundarySpace.regular(2, 4, LOG2)
    assert space.split_level('0110', '0101') == 1
    assert space.visual_distance('0110', '0101') == pytest.approx(
        2 / LOG2 * 0.5
    )
    assert space.visual_distance('0000', '1000') == pytest.approx(2 / LOG2)
    with pytest.raises(SameCellError):
        space.split_level('0110', 6)


def test_cells_accept_addresses_indices_and_vertices():
    space = BoundarySpace.regular(3, 2, LOG3)
    assert space.cell('21') == Vertex((2, 1))
    assert space.cell(7) == Vertex((2, 1))
    assert space.cell(Vertex((2, 1))) == Vertex((2, 1))
    with pytest.raises(InvalidVertexError):
        space.cell('2')
    assert space.size == 9
    assert len(list(space.cells())) == 9


@pytest.mark.parametrize('branching,depth', [
    (2, 1), (2, 3), (2, 5), (2, 6), (2, 7), (2, 8),
    (3, 1), (3, 2), (3, 3), (3, 4), (3, 5),
])
def test_ultrametric_inequality_holds_exhaustively(branching, depth):
    space = BoundarySpace.regular(branching, depth, LOG2)
    cells = np.arange(space.size)
    xi, chi = (a.ravel() for a in np.meshgrid(cells, cells, indexing='ij'))
    between = space.split_levels(xi, chi)
    for zeta in cells:
        far = space.split_levels(zeta, chi)
        near = np.minimum(space.split_levels(zeta, xi), between)
        assert not np.any(far < near)


def sharing_prefix(rng, cells, branching, depth):
    """Cells agreeing with the given ones on a random number of digits."""
    shift = np.power(branching, depth - rng.integers(0, depth + 1,
                                                     len(cells)))
    return cells // shift * shift \
        + rng.integers(0, branching ** depth, len(cells)) % shift


def visual_distances(space, i, j):
    return np.where(i == j, 0.0, space.scale(space.split_levels(i, j)))


@pytest.mark.parametrize('branching', [2, 3])
def test_ultrametric_inequality_on_sampled_deep_triples(branching):
    depth = 20
    space = BoundarySpace.regular(branching, depth, LOG3)
    rng = np.random.default_rng(depth)
    zeta = rng.integers(0, space.size, 100_000)
    xi = sharing_prefix(rng, zeta, branching, depth)
    chi = sharing_prefix(rng, xi, branching, depth)
    far = visual_distances(space, zeta, chi)
    near = np.maximum(visual_distances(space, zeta, xi),
                      visual_distances(space, xi, chi))
    assert not np.any(far > near)
    assert len(np.unique(space.split_levels(zeta, xi))) > depth // 2


def test_visual_distance_halves_the_comb_distance_of_leaves():
    depth = 20
    space = BoundarySpace.regular(2, depth, LOG2)
    rng = np.random.default_rng(1)
    zeta = rng.integers(0, space.size, 1000)
    xi = sharing_prefix(rng, zeta, 2, depth)
    split = space.split_levels(zeta, xi)
    assert np.array_equal(comb_distances(depth, zeta, depth, xi, 2),
                          2 * (depth - split))
    for i, j, k in zip(zeta[:50], xi[:50], split[:50]):
        if i != j:
            assert space.visual_distance(int(i), int(j)) \
                == pytest.approx(float(space.scale(k)), rel=1e-12)


def test_vectorized_split_levels_match_the_scalar_ones():
    space = BoundarySpace.regular(3, 3, LOG3)
    for i, j in itertools.combinations(range(space.size), 2):
        assert space.split_levels(np.array([i]), np.array([j]))[0] \
            == space.split_level(i, j)
    assert space.split_levels(np.array([4]), np.array([4]))[0] == 3


def test_radius_resolution_at_the_scale_endpoints():
    space = BoundarySpace.regular(2, 8, LOG2)
    assert space.resolve_level(float(space.scale(3))) == (4, False)
    assert space.resolve_level(float(space.scale(3)) * 1.001) == (3, False)
    assert space.resolve_level(1e-9) == (8, True)
    with pytest.raises(ParameterViolation):
        space.resolve_level(0.0)


def test_ball_is_a_cylinder():
    space = BoundarySpace.regular(2, 5, LOG2)
    r = float(space.scale(2)) * 1.5
    cells = space.ball_cells('01101', r)
    assert len(cells) == 2 ** 3
    assert all(cell.address[:2] == (0, 1) for cell in cells)
    assert space.ball_measure('01101', r) == 2 ** -2


@settings(max_examples=20, deadline=None)
@given(st.sampled_from([2, 3, 4]), st.floats(0.3, 2.0))
def test_ahlfors_spread_is_at_most_the_branching(branching, epsilon):
    space = BoundarySpace.regular(branching, 5, epsilon)
    assert space.hausdorff_dimension() == pytest.approx(
        math.log(branching) / epsilon
    )
    report = space.ahlfors_regularity_report(
        (c, r) for c in range(0, space.size, 7) for r in space.radius_grid(5)
    )
    assert report.spread <= branching * (1 + 1e-9)
    assert report.minimum > 0


def test_trees_with_single_children_have_no_boundary_space():
    with pytest.raises(UnsupportedError):
        BoundarySpace(TreeSpec(3, 1), LOG2)


def test_nonregular_boundary_has_no_uniform_measure():
    space = BoundarySpace(TreeSpec(3, rule=HashedBranching(2, 3)), LOG2)
    with pytest.raises(UnsupportedError):
        space.cell_measure(1)


def test_ahlfors_report_needs_a_ball():
    space = BoundarySpace.regular(2, 4, LOG2)
    with pytest.raises(ValidationError):
        space.ahlfors_regularity_report([])
