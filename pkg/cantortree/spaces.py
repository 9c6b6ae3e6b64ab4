import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from cantortree.boundary import BoundarySpace, Cell
from cantortree.errors import InvalidVertexError, ParameterViolation, \
    UnsupportedError, ValidationError
from cantortree.measure import MetricWeights, TreePoint, cone_mass, \
    gauss_integrate
from cantortree.tree import TreeSpec, Vertex
from cantortree.utils import format_float

EXACT_CLASS_LIMIT = 512
SAMPLED_PAIRS = 4096


class BoundaryFunction:
    """A function on the boundary, constant on each depth-m cell."""

    def __init__(
            self,
            space: BoundarySpace,
            values: Sequence[float],
            resolution: Optional[int] = None
    ):
        space.tree.require_regular('Boundary functions')
        values = np.asarray(values, dtype=float)
        if resolution is None:
            resolution = round(math.log(len(values), space.branching)) \
                if len(values) > 1 else 0
        if resolution > space.depth \
                or len(values) != space.branching ** resolution:
            raise ValidationError(
                f'{len(values)} values do not fill the depth-{resolution} '
                f'cells of {space.tree}'
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError('Boundary function values must be finite')
        self.space = space
        self.values = values
        self.resolution = resolution

    @classmethod
    def constant(cls, space: BoundarySpace, value: float) \
            -> 'BoundaryFunction':
        return cls(space, [value], 0)

    @classmethod
    def indicator(cls, space: BoundarySpace, prefix: Vertex) \
            -> 'BoundaryFunction':
        space.tree.validate(prefix)
        values = np.zeros(space.branching ** prefix.level)
        values[space.tree.index_of(prefix)] = 1.0
        return cls(space, values, prefix.level)

    @classmethod
    def random(
            cls,
            space: BoundarySpace,
            seed: int,
            resolution: Optional[int] = None
    ) -> 'BoundaryFunction':
        resolution = space.depth if resolution is None else resolution
        rng = np.random.default_rng(seed)
        return cls(
            space,
            rng.uniform(-1, 1, space.branching ** resolution),
            resolution
        )

    def refine(self, level: int) -> 'BoundaryFunction':
        if level < self.resolution:
            raise ValidationError(
                f'Cannot refine a depth-{self.resolution} function to '
                f'depth {level}'
            )
        factor = self.space.branching ** (level - self.resolution)
        return BoundaryFunction(
            self.space, np.repeat(self.values, factor), level
        )

    def cell_values(self) -> np.ndarray:
        return self.refine(self.space.depth).values

    def value(self, cell: Cell) -> float:
        cell = self.space.cell(cell)
        return float(self.values[
            self.space.tree.index_of(cell.prefix(self.resolution))
        ])

    def serialize(self) -> str:
        header = f'K={self.space.branching} ' \
                 f'epsilon={format_float(self.space.epsilon)} ' \
                 f'm={self.resolution}'
        return '\n'.join([header] + [format_float(v) for v in self.values])

    @classmethod
    def parse(cls, text: str, space: BoundarySpace) -> 'BoundaryFunction':
        lines = [line for line in text.strip().split('\n') if line.strip()]
        fields = dict(item.split('=') for item in lines[0].split())
        if int(fields['K']) != space.branching:
            raise ValidationError(
                f'Function was written for K={fields["K"]}, not '
                f'{space.branching}'
            )
        return cls(space, [float(v) for v in lines[1:]], int(fields['m']))


class TreeFunction:
    """Vertex values of a function that is linear in d_X along edges."""

    def __init__(self, tree: TreeSpec, levels: Sequence[np.ndarray]):
        tree.require_regular('Tree functions')
        if len(levels) != tree.depth + 1:
            raise ValidationError(
                f'Expected {tree.depth + 1} levels of values, got '
                f'{len(levels)}'
            )
        levels = [np.asarray(values, dtype=float) for values in levels]
        for n, values in enumerate(levels):
            if values.shape != (tree.branching ** n,):
                raise ValidationError(
                    f'Level {n} needs {tree.branching ** n} values'
                )
            if not np.all(np.isfinite(values)):
                raise ValidationError('Tree function values must be finite')
        self.tree = tree
        self.levels = levels

    @classmethod
    def constant(cls, tree: TreeSpec, value: float) -> 'TreeFunction':
        return cls(tree, [
            np.full(tree.branching ** n, float(value))
            for n in range(tree.depth + 1)
        ])

    @classmethod
    def random(cls, tree: TreeSpec, seed: int) -> 'TreeFunction':
        rng = np.random.default_rng(seed)
        return cls(tree, [
            rng.uniform(-1, 1, tree.branching ** n)
            for n in range(tree.depth + 1)
        ])

    @classmethod
    def distance_from_root(cls, tree: TreeSpec, weights: MetricWeights) \
            -> 'TreeFunction':
        return cls(tree, [
            np.full(tree.branching ** n, float(weights.length(0, n)))
            for n in range(tree.depth + 1)
        ])

    def value(self, v: Vertex) -> float:
        self.tree.validate(v)
        return float(self.levels[v.level][self.tree.index_of(v)])

    def evaluate(self, point: TreePoint, weights: MetricWeights) -> float:
        v = point.vertex
        if v.is_root:
            return self.value(v)
        top = self.value(v.prefix(v.level - 1))
        bottom = self.value(v)
        share = float(weights.length(v.level - 1, point.level)
                      / weights.length(v.level - 1, v.level))
        return top + (bottom - top) * share

    def parent_values(self, level: int) -> np.ndarray:
        return np.repeat(self.levels[level - 1], self.tree.branching)

    def serialize(self) -> str:
        header = f'K={self.tree.branching} N={self.tree.depth}'
        return '\n'.join([header] + [
            format_float(v) for values in self.levels for v in values
        ])


class RadialFunction:
    """A tree function constant on each level, kept without the tree."""

    def __init__(
            self,
            tree: TreeSpec,
            values: Sequence[float],
            gradient: Optional[Sequence[float]] = None
    ):
        tree.require_regular('Radial functions')
        self.tree = tree
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (tree.depth + 1,):
            raise ValidationError(
                f'Expected {tree.depth + 1} level values'
            )
        self.gradient = None if gradient is None \
            else np.asarray(gradient, dtype=float)

    def value(self, v: Vertex) -> float:
        self.tree.validate(v)
        return float(self.values[v.level])

    def to_tree_function(self) -> TreeFunction:
        return TreeFunction(self.tree, [
            np.full(self.tree.branching ** n, value)
            for n, value in enumerate(self.values)
        ])

    def energy_tail(self, p: float, weights: MetricWeights) -> float:
        """Energy beyond the depth, continuing the last term ratio."""
        if self.gradient is None:
            raise ValidationError('Radial function has no gradient')
        depth = self.tree.depth
        if depth < 2:
            raise ValidationError('Need two levels to continue the series')
        levels = np.array([depth - 1, depth])
        terms = np.power(float(self.tree.branching), levels) \
            * self.gradient[levels] ** p * weights.mass(levels - 1, levels)
        if terms[1] == 0:
            return 0.0
        ratio = float(terms[1] / terms[0]) if terms[0] > 0 else math.inf
        if ratio >= 1:
            return math.inf
        return float(terms[1] * ratio / (1 - ratio))


class EdgeGradient:
    """One nonnegative constant per edge; level j holds the edges into j."""

    def __init__(self, tree: TreeSpec, levels: Sequence[np.ndarray]):
        tree.require_regular('Edge gradients')
        levels = [np.asarray(values, dtype=float) for values in levels]
        if len(levels) != tree.depth + 1:
            raise ValidationError(
                f'Expected {tree.depth + 1} levels of edge values'
            )
        for j, values in enumerate(levels[1:], start=1):
            if values.shape != (tree.branching ** j,):
                raise ValidationError(f'Level {j} needs {tree.branching ** j}'
                                      f' edge values')
            if np.any(values < 0) or not np.all(np.isfinite(values)):
                raise ValidationError('Gradients must be finite and >= 0')
        self.tree = tree
        self.levels = [np.zeros(0)] + levels[1:]

    @classmethod
    def zero(cls, tree: TreeSpec) -> 'EdgeGradient':
        return cls(tree, [np.zeros(tree.branching ** j)
                          for j in range(tree.depth + 1)])

    def edge(self, v: Vertex) -> float:
        if v.is_root:
            raise InvalidVertexError('The root has no edge above it')
        return float(self.levels[v.level][self.tree.index_of(v)])


@dataclass(frozen=True)
class BesovParams:
    p: float
    theta: float
    q: Optional[float] = None

    def __post_init__(self):
        if not self.p >= 1:
            raise ParameterViolation(
                f'Besov exponent p must be >= 1, got {self.p}', (1, math.inf)
            )
        if not self.theta > 0:
            raise ParameterViolation(
                f'Smoothness theta must be positive, got {self.theta}',
                (0, math.inf)
            )
        if self.q is not None and self.q != self.p:
            raise UnsupportedError('Only q = p Besov spaces are implemented')


@dataclass
class BesovReport:
    value: float
    rows: List[Tuple[int, float, float, float]] = field(default_factory=list)
    sampled: bool = False

    @property
    def increments(self) -> List[float]:
        return [row[3] for row in self.rows]

    @property
    def last_increments(self) -> List[float]:
        return self.increments[-3:]


@dataclass
class EnergyReport:
    energy: float
    terms: np.ndarray
    tail: float

    @property
    def partial_sums(self) -> np.ndarray:
        return np.cumsum(self.terms)


def _class_pair_sums(
        classes: np.ndarray, p: float, rng: np.random.Generator
) -> Tuple[float, bool]:
    """Sum over rows of the ordered-pair sums of |a - b|^p."""
    count, size = classes.shape
    if size < 2:
        return 0.0, False
    if p == 2:
        centered = classes - classes.mean(axis=1, keepdims=True)
        return float(2 * size * np.sum(centered ** 2)), False
    if p == 1:
        ordered = np.sort(classes, axis=1)
        rank = 2 * np.arange(size) - size + 1
        return float(2 * np.sum(ordered * rank)), False
    if size <= EXACT_CLASS_LIMIT:
        chunk = max(1, 4_000_000 // (size * size))
        total = 0.0
        for start in range(0, count, chunk):
            block = classes[start:start + chunk]
            total += float(np.sum(
                np.abs(block[:, :, None] - block[:, None, :]) ** p
            ))
        return total, False
    first = rng.integers(0, size, (count, SAMPLED_PAIRS))
    second = rng.integers(0, size, (count, SAMPLED_PAIRS))
    rows = np.arange(count)[:, None]
    estimate = np.mean(
        np.abs(classes[rows, first] - classes[rows, second]) ** p, axis=1
    )
    return float(np.sum(estimate) * size * size), True


def level_pair_sum(
        f: BoundaryFunction, level: int, p: float, seed: int = 0
) -> Tuple[float, bool]:
    """Ordered-pair sum of |f(a) - f(b)|^p over cells sharing a level prefix."""
    if level >= f.resolution:
        return 0.0, False
    classes = f.values.reshape(f.space.branching ** level, -1)
    return _class_pair_sums(classes, p, np.random.default_rng(seed))


def ep_at_level(
        f: BoundaryFunction, level: int, p: float, seed: int = 0
) -> Tuple[float, bool]:
    total, sampled = level_pair_sum(f, level, p, seed)
    branching = f.space.branching
    value = float(branching) ** (level - 2 * f.resolution) * total
    return max(value, 0.0) ** (1 / p), sampled


def ep_modulus(f: BoundaryFunction, t: float, p: float, seed: int = 0) \
        -> float:
    level = f.space.level_for_radius(t)
    value, sampled = ep_at_level(f, level, p, seed)
    if sampled:
        logging.warning(f'E_p at level {level} used sampled pair sums')
    return value


def besov_scale(space: BoundarySpace, n: int) -> float:
    return 2 / space.epsilon * math.exp((1 - n) * space.epsilon)


def besov_report(
        f: BoundaryFunction, params: BesovParams, seed: int = 0
) -> BesovReport:
    p, theta = params.p, params.theta
    rows = []
    total, sampled = 0.0, False
    for n in range(f.space.depth + 1):
        t = besov_scale(f.space, n)
        value, was_sampled = ep_at_level(f, n, p, seed)
        sampled |= was_sampled
        increment = (value / t ** theta) ** p
        total += increment
        rows.append((n, t, value, increment))
    if sampled:
        logging.warning('Besov seminorm used sampled pair sums')
    return BesovReport(value=total ** (1 / p), rows=rows, sampled=sampled)


def besov_seminorm_sum(
        f: BoundaryFunction, params: BesovParams, seed: int = 0
) -> float:
    return besov_report(f, params, seed).value


def besov_seminorm_double_integral(
        f: BoundaryFunction, params: BesovParams, seed: int = 0
) -> float:
    p, theta = params.p, params.theta
    space = f.space
    m = f.resolution
    sums = [level_pair_sum(f, k, p, seed)[0] for k in range(m + 1)]
    total = 0.0
    for k in range(m):
        split_exactly = max(sums[k] - sums[k + 1], 0.0)
        weight = float(space.branching) ** (k - 2 * m) \
            / float(space.scale(k)) ** (theta * p)
        total += split_exactly * weight
    return total ** (1 / p)


def lp_norm(f: BoundaryFunction, p: float) -> float:
    return float(np.mean(np.abs(f.values) ** p)) ** (1 / p)


def besov_norm(
        f: BoundaryFunction, params: BesovParams, seed: int = 0
) -> float:
    return lp_norm(f, params.p) + besov_seminorm_sum(f, params, seed)


def subset_ratio(
        f: BoundaryFunction,
        params: BesovParams,
        smaller: BesovParams,
        seed: int = 0
) -> float:
    """B^tau_{q,q} seminorm over B^theta_{p,p} seminorm, q <= p, tau < theta."""
    if smaller.p > params.p or smaller.theta >= params.theta:
        raise ParameterViolation(
            'The inclusion needs q <= p and tau < theta'
        )
    top = besov_seminorm_sum(f, params, seed)
    if top == 0:
        return 0.0
    return besov_seminorm_sum(f, smaller, seed) / top


def layer_average(f: BoundaryFunction, n: int) -> BoundaryFunction:
    if not 0 <= n <= f.resolution:
        raise ValidationError(
            f'Layer {n} outside [0, {f.resolution}]'
        )
    if n == f.resolution:
        return f
    classes = f.values.reshape(f.space.branching ** n, -1)
    return BoundaryFunction(f.space, classes.mean(axis=1), n)


def minimal_upper_gradient(u: TreeFunction, weights: MetricWeights) \
        -> EdgeGradient:
    levels = [np.zeros(0)]
    for j in range(1, u.tree.depth + 1):
        change = np.abs(u.levels[j] - u.parent_values(j))
        levels.append(change / float(weights.length(j - 1, j)))
    return EdgeGradient(u.tree, levels)


def energy_report(
        u: Union[TreeFunction, RadialFunction],
        p: float,
        weights: MetricWeights,
        gradient: Optional[EdgeGradient] = None
) -> EnergyReport:
    if p < 1:
        raise ParameterViolation(f'Need p >= 1, got {p}', (1, math.inf))
    tree = u.tree
    weights.require_finite_measure(tree.branching)
    levels = np.arange(1, tree.depth + 1)
    band = weights.mass(levels - 1, levels)
    if isinstance(u, RadialFunction):
        if u.gradient is None:
            raise ValidationError('Radial function has no gradient')
        counts = np.power(float(tree.branching), levels)
        terms = counts * u.gradient[1:] ** p * band
        return EnergyReport(
            energy=float(np.sum(terms)), terms=terms,
            tail=u.energy_tail(p, weights),
        )
    if gradient is None:
        gradient = getattr(u, 'gradient', None) \
            or minimal_upper_gradient(u, weights)
    terms = np.array([
        float(np.sum(gradient.levels[j] ** p)) * band[j - 1]
        for j in levels
    ])
    tail = u.energy_tail(p, weights) \
        if isinstance(u, RecursiveGammaFunction) else 0.0
    return EnergyReport(energy=float(np.sum(terms)), terms=terms, tail=tail)


def newtonian_energy(
        u: Union[TreeFunction, RadialFunction],
        p: float,
        weights: MetricWeights,
        gradient: Optional[EdgeGradient] = None
) -> float:
    return energy_report(u, p, weights, gradient).energy


def tree_lp_norm(
        u: TreeFunction,
        p: float,
        weights: MetricWeights,
        include_tail: bool = True
) -> float:
    """L^p(mu) norm; beyond depth N the function keeps its depth-N values."""
    tree = u.tree
    weights.require_finite_measure(tree.branching)
    total = 0.0
    for j in range(1, tree.depth + 1):
        top = u.parent_values(j)
        bottom = u.levels[j]
        start = float(j - 1)
        span = float(weights.length(start, j))
        lo = np.full(top.shape, start)
        hi = np.full(top.shape, float(j))
        change = bottom - top
        with np.errstate(divide='ignore', invalid='ignore'):
            share = np.where(change != 0, -top / change, -1.0)
        middle = hi.copy()
        inside = (share > 0) & (share < 1)
        middle[inside] = weights.level_below(start, share[inside] * span)

        def integrand(nodes, top=top, change=change, start=start, span=span):
            along = top[:, None] + change[:, None] \
                * weights.length(start, nodes) / span
            return np.abs(along) ** p * np.exp(-weights.beta * nodes)

        total += float(np.sum(gauss_integrate(integrand, lo, middle)))
        total += float(np.sum(gauss_integrate(integrand, middle, hi)))
    if include_tail:
        cone = cone_mass(tree.depth, math.inf, tree.branching, weights)
        total += float(np.sum(np.abs(u.levels[tree.depth]) ** p)) * cone
    return total ** (1 / p)


def newtonian_norm(
        u: TreeFunction,
        p: float,
        weights: MetricWeights,
        gradient: Optional[EdgeGradient] = None
) -> float:
    energy = newtonian_energy(u, p, weights, gradient)
    return (tree_lp_norm(u, p, weights) ** p + energy) ** (1 / p)


def holder_seminorm(f: BoundaryFunction, alpha: float) -> float:
    if not alpha > 0:
        raise ParameterViolation(
            f'Hoelder exponent must be positive, got {alpha}', (0, math.inf)
        )
    best = 0.0
    for k in range(f.resolution):
        classes = f.values.reshape(f.space.branching ** k, -1)
        spread = float(np.max(classes.max(axis=1) - classes.min(axis=1)))
        best = max(best, spread / float(f.space.scale(k)) ** alpha)
    return best


def power_function(
        space: BoundarySpace, center: Cell, alpha: float, p: float = 1.0
) -> BoundaryFunction:
    dimension = space.hausdorff_dimension()
    if not alpha > -dimension / p:
        raise ParameterViolation(
            f'Power exponent {alpha} must exceed -Q/p', (-dimension / p,
                                                          math.inf)
        )
    center = space.cell(center)
    cells = np.arange(space.size, dtype=np.int64)
    split = space.split_levels(cells, space.tree.index_of(center))
    distance = space.scale(split)
    # The centre cell sits at the resolution scale
    return BoundaryFunction(space, distance ** alpha, space.depth)


class LogFunction(RadialFunction):
    """log(|x| + 1) with its edge-constant upper gradient."""

    def __init__(self, tree: TreeSpec, weights: MetricWeights):
        levels = np.arange(tree.depth + 1, dtype=float)
        gradient = np.zeros(tree.depth + 1)
        edges = levels[1:]
        gradient[1:] = np.maximum(
            np.exp(weights.epsilon * (edges - 1)) / edges,
            np.exp(weights.epsilon * edges) / (edges + 1),
        )
        super().__init__(tree, np.log(levels + 1), gradient)
        self.weights = weights

    def growth_ratio(self, p: float, weights: MetricWeights) -> float:
        return self.tree.branching * math.exp(p * weights.epsilon
                                              - weights.beta)

    def energy_tail(self, p: float, weights: MetricWeights) -> float:
        ratio = self.growth_ratio(p, weights)
        if ratio >= 1:
            return math.inf
        depth = self.tree.depth
        last = self.tree.branching ** depth * self.gradient[depth] ** p \
            * float(weights.mass(depth - 1, depth))
        return float(last * ratio / (1 - ratio))


def log_function(tree: TreeSpec, weights: MetricWeights) -> LogFunction:
    return LogFunction(tree, weights)


class RecursiveGammaFunction(TreeFunction):
    """f(root) = 0 and f(c(x)) = f(x) + e^((gamma - eps)|x|), c(x) = child 0."""

    def __init__(self, tree: TreeSpec, weights: MetricWeights, gamma: float):
        branching = tree.branching
        step = gamma - weights.epsilon
        levels = [np.zeros(1)]
        chosen = []
        for j in range(1, tree.depth + 1):
            first = np.arange(branching ** j) % branching == 0
            levels.append(
                np.repeat(levels[-1], branching)
                + first * math.exp(step * (j - 1))
            )
            chosen.append(first)
        super().__init__(tree, levels)
        self.weights = weights
        self.gamma = gamma
        slope = weights.epsilon / -math.expm1(-weights.epsilon)
        self.gradient = EdgeGradient(tree, [np.zeros(0)] + [
            first * slope * math.exp(gamma * (j - 1))
            for j, first in enumerate(chosen, start=1)
        ])

    @property
    def bound(self) -> float:
        return 1 / -math.expm1(self.gamma - self.weights.epsilon)

    def limit_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Interval holding the boundary limits inside each depth-N cell."""
        depth = self.tree.depth
        reach = math.exp((self.gamma - self.weights.epsilon) * depth) \
            * self.bound
        values = self.levels[depth]
        return values, values + reach

    def energy_tail(self, p: float, weights: MetricWeights) -> float:
        ratio = self.tree.branching * math.exp(p * self.gamma - weights.beta)
        if ratio >= 1:
            return math.inf
        depth = self.tree.depth
        last = float(np.sum(self.gradient.levels[depth] ** p)) \
            * float(weights.mass(depth - 1, depth))
        return last * ratio / (1 - ratio)


def gamma_interval(
        weights: MetricWeights,
        branching: int,
        p: Optional[float] = None,
        theta: Optional[float] = None
) -> Tuple[float, float]:
    low = 0.0 if theta is None else max(weights.epsilon * (1 - theta), 0.0)
    high = weights.epsilon if p is None \
        else min(weights.epsilon, (weights.beta - math.log(branching)) / p)
    return low, high


def recursive_gamma_function(
        tree: TreeSpec,
        weights: MetricWeights,
        gamma: float,
        p: Optional[float] = None,
        theta: Optional[float] = None
) -> RecursiveGammaFunction:
    low, high = gamma_interval(weights, tree.branching, p, theta)
    if not low < gamma < high:
        raise ParameterViolation(
            f'gamma={gamma} outside the admissible interval', (low, high)
        )
    return RecursiveGammaFunction(tree, weights, gamma)
