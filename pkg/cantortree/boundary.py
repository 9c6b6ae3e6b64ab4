import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Tuple, Union

import numpy as np

from cantortree.errors import InvalidVertexError, ParameterViolation, \
    SameCellError, UnsupportedError, ValidationError
from cantortree.tree import TreeSpec, Vertex, lca

Cell = Union[Vertex, str, int]


@dataclass
class AhlforsReport:
    dimension: float
    minimum: float
    maximum: float
    rows: List[Tuple[str, float, int, float, float]] = field(
        default_factory=list
    )

    @property
    def spread(self) -> float:
        return self.maximum / self.minimum


class BoundarySpace:
    """The boundary of a truncated tree, one point per depth-N cell."""

    def __init__(self, tree: TreeSpec, epsilon: float):
        tree.require_perfect('Boundary analysis')
        if not epsilon > 0:
            raise ParameterViolation(
                f'Metric exponent must be positive, got {epsilon}'
            )
        self.tree = tree
        self.epsilon = float(epsilon)

    @classmethod
    def regular(cls, branching: int, depth: int, epsilon: float) \
            -> 'BoundarySpace':
        return cls(TreeSpec(depth, branching), epsilon)

    @property
    def depth(self) -> int:
        return self.tree.depth

    @property
    def branching(self) -> int:
        return self.tree.branching

    @property
    def size(self) -> int:
        return self.tree.level_size(self.depth)

    @property
    def diameter(self) -> float:
        return 2 / self.epsilon

    def with_depth(self, depth: int) -> 'BoundarySpace':
        return BoundarySpace(self.tree.with_depth(depth), self.epsilon)

    def with_epsilon(self, epsilon: float) -> 'BoundarySpace':
        return BoundarySpace(self.tree, epsilon)

    def cell(self, cell: Cell) -> Vertex:
        if isinstance(cell, str):
            cell = self.tree.parse(cell)
        elif not isinstance(cell, Vertex):
            cell = self.tree.vertex_at(self.depth, int(cell))
        if cell.level != self.depth:
            raise InvalidVertexError(
                f'Boundary cell {cell} must have length {self.depth}'
            )
        return self.tree.validate(cell)

    def cells(self) -> Iterator[Vertex]:
        return self.tree.vertices_at_level(self.depth)

    def scale(self, level):
        """Visual distance of two cells splitting at `level`."""
        return 2 / self.epsilon * np.exp(-self.epsilon * np.asarray(level))

    def split_level(self, zeta: Cell, xi: Cell) -> int:
        zeta, xi = self.cell(zeta), self.cell(xi)
        if zeta == xi:
            raise SameCellError(
                f'Cells {zeta} and {xi} coincide at depth {self.depth}'
            )
        return lca(zeta, xi).level

    def visual_distance(self, zeta: Cell, xi: Cell) -> float:
        return float(self.scale(self.split_level(zeta, xi)))

    def split_levels(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        """Split levels of depth-N cells given by integer index arrays.

        Equal cells get split level N.
        """
        self.tree.require_regular('Vectorized split levels')
        i, j = np.broadcast_arrays(
            np.asarray(i, dtype=np.int64), np.asarray(j, dtype=np.int64)
        )
        result = np.zeros(i.shape, dtype=np.int64)
        for k in range(1, self.depth + 1):
            shift = self.branching ** (self.depth - k)
            result += (i // shift) == (j // shift)
        return result

    def resolve_level(self, r: float) -> Tuple[int, bool]:
        if not r > 0:
            raise ParameterViolation(f'Radius must be positive, got {r}')
        eps = self.epsilon
        level = math.floor(1 + math.log(2 / (eps * r)) / eps)
        # Settle rounding at the bracket endpoints
        while self.scale(level) >= r:
            level += 1
        while self.scale(level - 1) < r:
            level -= 1
        if level < 0 or level > self.depth:
            clamped = min(max(level, 0), self.depth)
            logging.warning(
                f'Radius {r} resolves to level {level}, clamping to {clamped}'
            )
            return clamped, True
        return level, False

    def level_for_radius(self, r: float) -> int:
        return self.resolve_level(r)[0]

    def ball_cells(self, zeta: Cell, r: float) -> List[Vertex]:
        zeta = self.cell(zeta)
        level = self.level_for_radius(r)
        return sorted(self.tree.subtree_cells(zeta.prefix(level), self.depth))

    def cell_measure(self, level: int) -> float:
        if not self.tree.regular:
            raise UnsupportedError(
                'The uniform cell measure needs a regular tree'
            )
        return float(self.branching) ** -level

    def ball_measure(self, zeta: Cell, r: float) -> float:
        self.cell(zeta)
        return self.cell_measure(self.level_for_radius(r))

    def hausdorff_dimension(self) -> float:
        self.tree.require_regular('Ahlfors regularity')
        return math.log(self.branching) / self.epsilon

    def radius_grid(self, bands: int, per_band: int = 3) -> List[float]:
        """Radii spread over the first `bands` level bands."""
        radii = []
        for k in range(1, bands + 1):
            for step in range(per_band):
                share = (step + 0.5) / per_band
                radii.append(float(self.scale(k - share)))
            radii.append(float(self.scale(k - 1)))
        return radii

    def ahlfors_regularity_report(
            self, samples: Iterable[Tuple[Cell, float]]
    ) -> AhlforsReport:
        dimension = self.hausdorff_dimension()
        rows = []
        for center, radius in samples:
            center = self.cell(center)
            level = self.level_for_radius(radius)
            mass = self.cell_measure(level)
            rows.append((
                self.tree.serialize(center), radius, level, mass,
                mass / radius ** dimension,
            ))
        ratios = [row[4] for row in rows]
        if not ratios:
            raise ValidationError('Ahlfors regularity needs at least one ball')
        return AhlforsReport(
            dimension=dimension,
            minimum=min(ratios),
            maximum=max(ratios),
            rows=rows,
        )
