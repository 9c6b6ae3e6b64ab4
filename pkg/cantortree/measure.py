import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple, TYPE_CHECKING

import numpy as np
from numpy.polynomial.legendre import leggauss

from cantortree.errors import InvalidVertexError, NotAnUpperGradientError, \
    ParameterViolation
from cantortree.tree import ROOT, TreeSpec, Vertex, lca

if TYPE_CHECKING:
    from cantortree.spaces import EdgeGradient, TreeFunction

GAUSS_NODES, GAUSS_WEIGHTS = leggauss(16)

NEAR_ROOT = 'near-root'
SMALL_RADIUS = 'small'
LARGE_RADIUS = 'large'


@dataclass(frozen=True)
class MetricWeights:
    epsilon: float
    beta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterViolation(
                f'Metric exponent must be positive, got {self.epsilon}'
            )

    @property
    def dimension_exponent(self) -> float:
        return max(1.0, self.beta / self.epsilon)

    @property
    def diameter(self) -> float:
        return 2 / self.epsilon

    def require_finite_measure(self, branching: int) -> None:
        if not self.beta > math.log(branching):
            raise ParameterViolation(
                f'Measure exponent {self.beta} must exceed log K for K='
                f'{branching}',
                (math.log(branching), math.inf)
            )

    def length(self, a, b):
        """d_X length between levels a <= b along a single ray."""
        eps = self.epsilon
        return -np.exp(-eps * np.asarray(a, dtype=float)) \
            * np.expm1(-eps * (np.asarray(b) - np.asarray(a))) / eps

    def mass(self, a, b):
        beta = self.beta
        if beta == 0:
            return np.asarray(b, dtype=float) - a
        return -np.exp(-beta * np.asarray(a, dtype=float)) \
            * np.expm1(-beta * (np.asarray(b) - np.asarray(a))) / beta

    def level_below(self, a, r):
        """Level reached after descending a length r from level a."""
        eps = self.epsilon
        rest = np.exp(-eps * np.asarray(a, dtype=float)) - eps * np.asarray(r)
        with np.errstate(divide='ignore', invalid='ignore'):
            return np.where(
                rest > 0, -np.log(np.where(rest > 0, rest, 1.0)) / eps,
                np.inf
            )

    def level_above(self, a, r):
        eps = self.epsilon
        return -np.log(
            np.exp(-eps * np.asarray(a, dtype=float)) + eps * np.asarray(r)
        ) / eps


@dataclass(frozen=True)
class TreePoint:
    vertex: Vertex
    fraction: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise InvalidVertexError(
                f'Edge fraction {self.fraction} outside [0, 1]'
            )
        if self.vertex.is_root and self.fraction != 1.0:
            object.__setattr__(self, 'fraction', 1.0)

    @classmethod
    def root(cls) -> 'TreePoint':
        return cls(ROOT)

    @property
    def level(self) -> float:
        if self.vertex.is_root:
            return 0.0
        return self.vertex.level - 1 + self.fraction


def metric_distance(a: TreePoint, b: TreePoint, weights: MetricWeights) \
        -> float:
    va, vb = a.vertex, b.vertex
    if va.is_ancestor_of(vb) or vb.is_ancestor_of(va):
        low, high = sorted((a.level, b.level))
        return float(weights.length(low, high))
    meet = lca(va, vb).level
    return float(
        weights.length(meet, a.level) + weights.length(meet, b.level)
    )


def algebraic_envelope(sigma: float, t: float) -> Tuple[float, float, float]:
    if not sigma > 0 or not 0.0 <= t <= 1.0:
        raise ParameterViolation(
            f'Envelope needs sigma > 0 and t in [0, 1], got ({sigma}, {t})'
        )
    return (
        min(1.0, sigma) * t,
        1.0 - (1.0 - t) ** sigma,
        max(1.0, sigma) * t,
    )


def cone_mass(
        level: float, upper: float, branching: int, weights: MetricWeights
) -> float:
    """Mass of the subtree below a level-`level` vertex, cut at `upper`."""
    if not upper > level:
        return 0.0
    beta = weights.beta
    q = branching * math.exp(-beta)
    band = branching * math.exp(-beta * level) * -math.expm1(-beta) / beta
    if math.isinf(upper):
        return band / (1 - q)
    bands = math.floor(upper - level)
    if q == 1:
        series = float(bands)
    else:
        series = (1 - q ** bands) / (1 - q)
    partial = branching * q ** bands * math.exp(-beta * level) \
        * -math.expm1(-beta * (upper - level - bands)) / beta
    return band * series + partial


def gauss_integrate(integrand, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """16-point Gauss-Legendre rule applied to each interval [lo, hi]."""
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    half = (hi - lo) / 2
    nodes = half * GAUSS_NODES + (hi + lo) / 2
    return np.sum(integrand(nodes) * GAUSS_WEIGHTS * half, axis=-1)


@dataclass(frozen=True)
class BallPart:
    kind: str
    vertex: Vertex
    low: float
    high: float
    mass: float


@dataclass
class HalfBallReport:
    vertex: Vertex
    radius: float
    measure: float
    lower: float
    upper: float
    comparison: float
    rho: float

    @property
    def ratio(self) -> float:
        return self.measure / self.comparison


@dataclass
class BallReport:
    center: TreePoint
    radius: float
    measure: float
    lower: float
    upper: float
    regime: str
    comparison: float
    clamped: bool = False
    decomposition: List[BallPart] = field(default_factory=list)

    @property
    def ratio(self) -> float:
        return self.measure / self.comparison


@dataclass
class DimensionReport:
    s: float
    statistic: float
    s_prime: Optional[float]
    statistic_prime: Optional[float]
    samples: int
    worst: Optional[Tuple[TreePoint, float, TreePoint, float]] = None


@dataclass
class PoincareReport:
    constant: float
    p: float
    mass: float
    mean: float
    clamped: bool = False


@dataclass(frozen=True)
class NestedBallSample:
    center: TreePoint
    radius: float
    inner_center: TreePoint
    inner_radius: float


class WeightedTree:
    def __init__(self, tree: TreeSpec, weights: MetricWeights):
        self.tree = tree
        self.weights = weights

    def metric_distance(self, a: TreePoint, b: TreePoint) -> float:
        self.tree.validate(a.vertex)
        self.tree.validate(b.vertex)
        return metric_distance(a, b, self.weights)

    def _require_measure(self) -> None:
        self.weights.require_finite_measure(self.tree.max_branching)

    def _cap(self, include_tail: bool) -> float:
        return math.inf if include_tail else float(self.tree.depth)

    def total_measure(self, include_tail: bool = True) -> float:
        self._require_measure()
        self.tree.require_regular('A point value of the total measure')
        return cone_mass(
            0, self._cap(include_tail), self.tree.branching, self.weights
        )

    def cone_measure(
            self, level: float, radius: float, include_tail: bool = True
    ) -> float:
        self._require_measure()
        upper = min(
            float(self.weights.level_below(level, radius)),
            self._cap(include_tail)
        )
        return cone_mass(level, upper, self.tree.branching, self.weights)

    def half_ball_measure(self, z: Vertex, r: float) -> HalfBallReport:
        self.tree.validate(z)
        self._require_measure()
        if not r > 0:
            raise ParameterViolation(f'Radius must be positive, got {r}')
        n = z.level
        reach = float(self.weights.level_below(n, r))
        upper = self._bracket_cone(n, reach)
        comparison = math.exp((self.weights.epsilon - self.weights.beta) * n) \
            * r
        return HalfBallReport(
            vertex=z,
            radius=r,
            measure=upper[0] if self.tree.regular else math.nan,
            lower=upper[0],
            upper=upper[1],
            comparison=comparison,
            rho=reach - n,
        )

    def _bracket_cone(self, level: float, upper: float) -> Tuple[float, float]:
        if self.tree.regular:
            value = cone_mass(level, upper, self.tree.branching, self.weights)
            return value, value
        return (
            cone_mass(level, upper, 1, self.weights),
            cone_mass(level, upper, self.tree.max_branching, self.weights),
        )

    def regime(self, x: TreePoint, r: float) -> Tuple[str, float]:
        eps, beta = self.weights.epsilon, self.weights.beta
        level = x.level
        if level <= math.log(2) / eps:
            return NEAR_ROOT, r
        if r <= math.exp(-eps * level) / eps:
            return SMALL_RADIUS, math.exp((eps - beta) * level) * r
        return LARGE_RADIUS, r ** (beta / eps)

    def ball_measure(
            self, x: TreePoint, r: float, include_tail: bool = True
    ) -> BallReport:
        self.tree.validate(x.vertex)
        self._require_measure()
        if not r > 0:
            raise ParameterViolation(f'Radius must be positive, got {r}')
        clamped = False
        if r > 2 * self.weights.diameter:
            logging.warning(
                f'Clamping radius {r} to twice the diameter '
                f'{2 * self.weights.diameter}'
            )
            r, clamped = 2 * self.weights.diameter, True

        if self.tree.regular:
            parts = self._regular_parts(x, r, include_tail)
            lower = upper = float(sum(part.mass for part in parts))
        else:
            parts = []
            lower = self._explicit_ball(x, r, include_tail, 1)
            upper = self._explicit_ball(
                x, r, include_tail, self.tree.max_branching
            )
        regime, comparison = self.regime(x, r)
        return BallReport(
            center=x,
            radius=r,
            measure=lower if self.tree.regular else math.nan,
            lower=lower,
            upper=upper,
            regime=regime,
            comparison=comparison,
            clamped=clamped,
            decomposition=parts,
        )

    def _regular_parts(
            self, x: TreePoint, r: float, include_tail: bool
    ) -> List[BallPart]:
        w = self.weights
        branching = self.tree.branching
        cap = self._cap(include_tail)
        parts = []
        v, level = x.vertex, x.level

        # Downwards: the rest of x's own edge, then the cone below v
        if not v.is_root:
            bottom = min(float(w.level_below(level, r)), float(v.level))
            parts.append(BallPart(
                'edge', v, level, bottom, float(w.mass(level, bottom))
            ))
        remaining = r - float(w.length(level, v.level))
        if remaining > 0:
            upper = min(float(w.level_below(v.level, remaining)), cap)
            parts.append(BallPart(
                'subtree', v, v.level, upper,
                cone_mass(v.level, upper, branching, w)
            ))

        # Upwards: edge segments towards the root plus the sibling cones
        remaining = r
        current, level = v, x.level
        while not current.is_root:
            top = current.level - 1
            reach = max(float(w.level_above(level, remaining)), float(top))
            parts.append(BallPart(
                'edge', current, reach, level, float(w.mass(reach, level))
            ))
            remaining -= float(w.length(top, level))
            if remaining <= 0:
                break
            parent = current.prefix(top)
            upper = min(float(w.level_below(top, remaining)), cap)
            parts.append(BallPart(
                'siblings', parent, top, upper,
                cone_mass(top, upper, branching, w)
                * (branching - 1) / branching
            ))
            current, level = parent, float(top)
        return [part for part in parts if part.mass > 0]

    def _explicit_ball(
            self, x: TreePoint, r: float, include_tail: bool, tail: int
    ) -> float:
        w = self.weights
        v, level = x.vertex, x.level
        total = 0.0
        if not v.is_root:
            bottom = min(float(w.level_below(level, r)), float(v.level))
            total += float(w.mass(level, bottom))
        remaining = r - float(w.length(level, v.level))
        if remaining > 0:
            total += self._explicit_down(v, remaining, include_tail, tail)

        remaining = r
        current, level = v, x.level
        while not current.is_root:
            top = current.level - 1
            reach = max(float(w.level_above(level, remaining)), float(top))
            total += float(w.mass(reach, level))
            remaining -= float(w.length(top, level))
            if remaining <= 0:
                break
            parent = current.prefix(top)
            for digit in range(self.tree.child_count(parent)):
                child = parent.child(digit)
                if child != current:
                    total += self._explicit_edge(
                        child, remaining, include_tail, tail
                    )
            current, level = parent, float(top)
        return total

    def _explicit_edge(
            self, child: Vertex, remaining: float, include_tail: bool,
            tail: int
    ) -> float:
        w = self.weights
        top = child.level - 1
        bottom = min(float(w.level_below(top, remaining)), float(child.level))
        total = float(w.mass(top, bottom))
        rest = remaining - float(w.length(top, child.level))
        if rest > 0:
            total += self._explicit_down(child, rest, include_tail, tail)
        return total

    def _explicit_down(
            self, v: Vertex, remaining: float, include_tail: bool, tail: int
    ) -> float:
        if v.level >= self.tree.depth:
            if not include_tail:
                return 0.0
            upper = float(self.weights.level_below(v.level, remaining))
            return cone_mass(v.level, upper, tail, self.weights)
        return sum(
            self._explicit_edge(v.child(d), remaining, include_tail, tail)
            for d in range(self.tree.child_count(v))
        )

    def doubling_ratio(
            self, x: TreePoint, r: float, include_tail: bool = True
    ) -> float:
        return self.ball_measure(x, 2 * r, include_tail).upper \
            / self.ball_measure(x, r, include_tail).upper

    def dimension_condition_check(
            self,
            samples: Iterable[NestedBallSample],
            s_prime: Optional[float] = None
    ) -> DimensionReport:
        s = self.weights.dimension_exponent
        best, best_prime, worst, count = math.inf, math.inf, None, 0
        for sample in samples:
            outer = self.ball_measure(sample.center, sample.radius).upper
            inner = self.ball_measure(
                sample.inner_center, sample.inner_radius
            ).upper
            scale = sample.inner_radius / sample.radius
            value = inner / outer / scale ** s
            if value < best:
                best = value
                worst = (
                    sample.center, sample.radius,
                    sample.inner_center, sample.inner_radius
                )
            if s_prime is not None:
                best_prime = min(best_prime, inner / outer / scale ** s_prime)
            count += 1
        return DimensionReport(
            s=s,
            statistic=best,
            s_prime=s_prime,
            statistic_prime=best_prime if s_prime is not None else None,
            samples=count,
            worst=worst,
        )

    def ball_pieces(
            self, x: TreePoint, r: float
    ) -> List[Tuple[np.ndarray, np.ndarray]]:
        """Level interval [lo, hi] of the ball on every edge, per level.

        Entry j describes the edges into level j (entry 0 is empty). Edges
        the ball misses have lo >= hi.
        """
        self.tree.require_regular('Ball pieces')
        self.tree.validate(x.vertex)
        w = self.weights
        branching = self.tree.branching
        v, level = x.vertex, x.level
        ancestors = [0]
        for n in range(1, v.level + 1):
            ancestors.append(ancestors[-1] * branching + v.address[n - 1])

        up_reach = float(w.level_above(level, r))
        down_reach = float(w.level_below(level, r))
        pieces = [(np.zeros(1), np.zeros(1))]
        for j in range(1, self.tree.depth + 1):
            edges = np.arange(branching ** j, dtype=np.int64)
            meet = np.zeros(edges.shape, dtype=np.int64)
            alive = np.ones(edges.shape, dtype=bool)
            for k in range(1, min(j, v.level) + 1):
                alive &= edges // branching ** (j - k) == ancestors[k]
                meet += alive
            on_path = meet == j
            base = np.abs(w.length(meet, level))
            rest = r - base
            reach = np.where(
                rest > 0, w.level_below(meet, np.maximum(rest, 0.0)), -np.inf
            )
            lo = np.where(on_path, max(j - 1.0, up_reach), j - 1.0)
            hi = np.where(
                on_path, min(float(j), down_reach), np.minimum(j, reach)
            )
            pieces.append((lo, hi))
        return pieces

    def poincare_check(
            self,
            u: 'TreeFunction',
            g: 'EdgeGradient',
            x: TreePoint,
            r: float,
            p: float = 1.0
    ) -> PoincareReport:
        if p < 1:
            raise ParameterViolation(f'Need p >= 1, got {p}', (1, math.inf))
        self._require_measure()
        clamped = False
        if r > 2 * self.weights.diameter:
            r, clamped = 2 * self.weights.diameter, True
        w = self.weights
        branching = self.tree.branching
        pieces = self.ball_pieces(x, r)

        lo_all, hi_all, top_all, bottom_all, grad_all, level_all = \
            [], [], [], [], [], []
        for j in range(1, len(pieces)):
            lo, hi = pieces[j]
            hit = hi > lo
            if not hit.any():
                continue
            index = np.nonzero(hit)[0]
            lo_all.append(lo[hit])
            hi_all.append(hi[hit])
            top_all.append(u.levels[j - 1][index // branching])
            bottom_all.append(u.levels[j][index])
            grad_all.append(g.levels[j][index])
            level_all.append(np.full(index.shape, j - 1, dtype=float))
        lo = np.concatenate(lo_all)
        hi = np.concatenate(hi_all)
        top = np.concatenate(top_all)
        bottom = np.concatenate(bottom_all)
        grad = np.concatenate(grad_all)
        start = np.concatenate(level_all)
        span = w.length(start, start + 1)

        def along(nodes):
            share = w.length(start[:, None], nodes) / span[:, None]
            return top[:, None] + (bottom - top)[:, None] * share

        mass = float(np.sum(w.mass(lo, hi)))
        mean = float(np.sum(gauss_integrate(
            lambda s: along(s) * np.exp(-w.beta * s), lo, hi
        ))) / mass

        # Split each piece where u crosses its mean so |u - mean|^p is smooth
        change = bottom - top
        with np.errstate(divide='ignore', invalid='ignore'):
            share = np.where(change != 0, (mean - top) / change, -1.0)
        crossing = np.full(lo.shape, -np.inf)
        inside = (share > 0) & (share < 1)
        crossing[inside] = w.level_below(
            start[inside], share[inside] * span[inside]
        )
        middle = np.clip(crossing, lo, hi)

        def deviation(nodes):
            return np.abs(along(nodes) - mean) ** p * np.exp(-w.beta * nodes)

        spread = float(
            np.sum(gauss_integrate(deviation, lo, middle))
            + np.sum(gauss_integrate(deviation, middle, hi))
        )
        energy = float(np.sum(grad ** p * w.mass(lo, hi)))
        if energy == 0:
            if spread > 1e-14 * mass:
                raise NotAnUpperGradientError(
                    'Zero gradient on a ball where the function is not '
                    'constant'
                )
            constant = 0.0
        else:
            constant = (spread / mass) ** (1 / p) \
                / (r * (energy / mass) ** (1 / p))
        return PoincareReport(
            constant=constant, p=p, mass=mass, mean=mean, clamped=clamped
        )


def random_vertex(tree: TreeSpec, rng: np.random.Generator, level: int) \
        -> Vertex:
    v = ROOT
    for _ in range(level):
        v = v.child(int(rng.integers(0, tree.child_count(v))))
    return v


def nested_ball_samples(
        tree: TreeSpec,
        weights: MetricWeights,
        seed: int,
        paths: int = 4
) -> List[NestedBallSample]:
    rng = np.random.default_rng(seed)
    eps = weights.epsilon
    samples = []
    for _ in range(paths):
        digits = random_vertex(tree, rng, tree.depth).address
        for k in range(tree.depth):
            center = TreePoint(Vertex(digits[:k]))
            radius = math.exp(-eps * k) / eps
            for n in range(k + 1, tree.depth + 1):
                for scale in (0.5, 1.0):
                    samples.append(NestedBallSample(
                        center, radius,
                        TreePoint(Vertex(digits[:n])),
                        scale * math.exp(-eps * n) / eps,
                    ))
    return samples


def ball_sample_grid(
        tree: TreeSpec,
        weights: MetricWeights,
        seed: int,
        count: int
) -> List[Tuple[TreePoint, float]]:
    """Seeded centers crossed with the radii (2/eps) e^(-eps j) lambda."""
    rng = np.random.default_rng(seed)
    eps = weights.epsilon
    radii = [
        scale * 2 / eps * math.exp(-eps * j)
        for j in range(tree.depth + 1) for scale in (0.5, 1.0)
    ]
    grid = []
    for _ in range(count):
        level = int(rng.integers(0, tree.depth + 1))
        vertex = random_vertex(tree, rng, level)
        fraction = 1.0 if vertex.is_root else float(rng.uniform(0, 1))
        center = TreePoint(vertex, fraction)
        grid.extend((center, radius) for radius in radii)
    return grid
