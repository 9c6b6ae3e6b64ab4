import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Optional, \
    Tuple

import numpy as np
from scipy.optimize import linprog

from cantortree.boundary import BoundarySpace, Cell
from cantortree.errors import ConditionFailure, ParameterViolation, \
    RegimeViolation, ResolutionError, TooFewTriplesError, ValidationError
from cantortree.measure import MetricWeights
from cantortree.spaces import BesovParams, BoundaryFunction, EdgeGradient, \
    TreeFunction, besov_seminorm_sum, lp_norm, minimal_upper_gradient, \
    newtonian_energy
from cantortree.trace import extend
from cantortree.tree import ROOT, RootedHomogeneous, TreeSpec, Vertex, \
    ancestor_index, comb_distance, comb_distances, common_prefix_levels, \
    geodesic

EXPLICIT = 'explicit'
SNOWFLAKE = 'snowflake'
INDUCED_FROM_RQI = 'induced-from-rqi'
EXTENDED_FROM_QS = 'extended-from-qs'

EXHAUSTIVE_TRIPLE_CELLS = 128
SAMPLED_TRIPLES = 100_000
MIN_FIT_TRIPLES = 100
EXHAUSTIVE_PAIR_VERTICES = 2048
SAMPLED_PAIRS = 1_000_000
ENVELOPE_TOLERANCE = 1e-9
UNSTABLE_THRESHOLD = 0.05
DENSITY_SCAN_LIMIT = 2 ** 22
CHUNK = 2 ** 18

ISOMETRY = 'isometry'


@dataclass(frozen=True)
class EtaProfile:
    alpha1: float
    alpha2: float
    A: float = 1.0

    def __post_init__(self):
        if not (self.alpha1 > 0 and self.alpha2 > 0 and self.A > 0):
            raise ParameterViolation(
                f'Power profile needs positive constants, got '
                f'({self.alpha1}, {self.alpha2}, {self.A})'
            )

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.A * np.where(
            t <= 1, t ** self.alpha1, t ** self.alpha2
        )

    def inverse_exponents(self) -> Tuple[float, float]:
        return 1 / self.alpha2, 1 / self.alpha1


@dataclass
class TripleSet:
    zeta: np.ndarray
    xi: np.ndarray
    chi: np.ndarray
    exhaustive: bool
    seed: Optional[int] = None

    def __len__(self):
        return len(self.zeta)

    def chunks(self) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        for start in range(0, len(self), CHUNK):
            stop = start + CHUNK
            yield (self.zeta[start:stop], self.xi[start:stop],
                   self.chi[start:stop])


def triples(
        space: BoundarySpace, seed: int = 0, samples: int = SAMPLED_TRIPLES
) -> TripleSet:
    """Cell triples with zeta != xi and zeta != chi."""
    size = space.size
    if size <= EXHAUSTIVE_TRIPLE_CELLS:
        zeta, xi, chi = (
            axis.ravel() for axis in np.meshgrid(
                *(np.arange(size, dtype=np.int64),) * 3, indexing='ij'
            )
        )
        keep = (zeta != xi) & (zeta != chi)
        return TripleSet(zeta[keep], xi[keep], chi[keep], True)
    rng = np.random.default_rng(seed)
    zeta, xi, chi = rng.integers(0, size, (3, samples), dtype=np.int64)
    keep = (zeta != xi) & (zeta != chi)
    return TripleSet(zeta[keep], xi[keep], chi[keep], False, seed)


def cell_pairs(size: int, seed: int = 0, samples: int = SAMPLED_PAIRS) \
        -> Tuple[np.ndarray, np.ndarray]:
    if size <= EXHAUSTIVE_PAIR_VERTICES:
        return np.triu_indices(size, 1)
    rng = np.random.default_rng(seed)
    i, j = rng.integers(0, size, (2, samples), dtype=np.int64)
    keep = i != j
    return i[keep], j[keep]


class BoundaryMap:
    """Depth-N domain cells sent to codomain prefixes of known length."""

    def __init__(
            self,
            domain: BoundarySpace,
            codomain: BoundarySpace,
            images: np.ndarray,
            known: Optional[np.ndarray] = None,
            provenance: str = EXPLICIT,
            eta: Optional[EtaProfile] = None
    ):
        domain.tree.require_regular('Boundary maps')
        codomain.tree.require_regular('Boundary maps')
        images = np.asarray(images, dtype=np.int64)
        known = np.full(images.shape, codomain.depth, dtype=np.int64) \
            if known is None else np.asarray(known, dtype=np.int64)
        if images.shape != (domain.size,) or known.shape != images.shape:
            raise ValidationError(
                f'A boundary map needs one image per domain cell '
                f'({domain.size})'
            )
        if np.any(images < 0) or np.any(images >= codomain.size):
            raise ValidationError('Image index outside the codomain cells')
        if np.any(known < 0) or np.any(known > codomain.depth):
            raise ValidationError('Known prefix length outside [0, M]')
        self.domain = domain
        self.codomain = codomain
        self.images = images
        self.known = known
        self.provenance = provenance
        self.eta = eta

    @classmethod
    def identity(cls, space: BoundarySpace) -> 'BoundaryMap':
        return cls(space, space, np.arange(space.size), provenance=EXPLICIT,
                   eta=EtaProfile(1.0, 1.0, 1.0))

    @property
    def resolved(self) -> np.ndarray:
        return self.known == self.codomain.depth

    def __call__(self, cell: Cell) -> Vertex:
        index = self.domain.tree.index_of(self.domain.cell(cell))
        image = self.codomain.tree.vertex_at(
            self.codomain.depth, self.images[index]
        )
        return image.prefix(int(self.known[index]))

    def prefix_indices(self) -> np.ndarray:
        shift = self.codomain.depth - self.known
        return self.images // np.power(
            self.codomain.branching, shift, dtype=np.int64
        )

    def image_splits(self, i: np.ndarray, j: np.ndarray) \
            -> Tuple[np.ndarray, np.ndarray]:
        """Image split levels and the mask of pairs the truncation hides."""
        common = self.codomain.split_levels(self.images[i], self.images[j])
        known = np.minimum(self.known[i], self.known[j])
        split = np.minimum(common, known)
        return split, split == known

    def serialize(self) -> str:
        header = f'provenance={self.provenance} ' \
                 f'K_X={self.domain.branching} N={self.domain.depth} ' \
                 f'K_Y={self.codomain.branching} M={self.codomain.depth}'
        lines = [header]
        for cell in self.domain.cells():
            lines.append(f'{self.domain.tree.serialize(cell)} '
                         f'{self.codomain.tree.serialize(self(cell))}')
        return '\n'.join(lines)


class VertexMap:
    def __init__(
            self,
            domain: TreeSpec,
            codomain: TreeSpec,
            levels: Optional[List[Tuple[np.ndarray, np.ndarray]]] = None,
            table: Optional[Dict[Vertex, Vertex]] = None,
            provenance: str = EXPLICIT,
            eta: Optional[EtaProfile] = None,
            epsilons: Optional[Tuple[float, float]] = None
    ):
        if (levels is None) == (table is None):
            raise ValidationError('Give either level arrays or a vertex table')
        if levels is not None:
            domain.require_regular('Array vertex maps')
            codomain.require_regular('Array vertex maps')
            levels = [
                (np.asarray(lv, dtype=np.int64), np.asarray(ix, np.int64))
                for lv, ix in levels
            ]
            if len(levels) != domain.depth + 1:
                raise ValidationError(
                    f'Expected {domain.depth + 1} levels of images'
                )
            for n, (lv, ix) in enumerate(levels):
                if lv.shape != (domain.branching ** n,) \
                        or ix.shape != lv.shape:
                    raise ValidationError(f'Level {n} has the wrong size')
                if np.any(lv > codomain.depth):
                    raise ValidationError(
                        f'Images at level {n} lie below depth '
                        f'{codomain.depth}'
                    )
        self.domain = domain
        self.codomain = codomain
        self._levels = levels
        self._table = table
        self.provenance = provenance
        self.eta = eta
        self.epsilons = epsilons

    @classmethod
    def from_function(
            cls,
            domain: TreeSpec,
            codomain: TreeSpec,
            function: Callable[[Vertex], Vertex],
            provenance: str = EXPLICIT
    ) -> 'VertexMap':
        table = {}
        for v in domain.vertices():
            table[v] = codomain.validate(function(v))
        return cls(domain, codomain, table=table, provenance=provenance)

    @classmethod
    def identity(cls, tree: TreeSpec) -> 'VertexMap':
        if tree.regular:
            return cls(tree, tree, levels=[
                (np.full(tree.branching ** n, n), np.arange(tree.branching ** n))
                for n in range(tree.depth + 1)
            ])
        return cls.from_function(tree, tree, lambda v: v)

    def __call__(self, v: Vertex) -> Vertex:
        if self._table is not None:
            if v not in self._table:
                raise ValidationError(f'Vertex {v} is outside the map')
            return self._table[v]
        self.domain.validate(v)
        level, index = self._levels[v.level]
        position = self.domain.index_of(v)
        return self.codomain.vertex_at(
            int(level[position]), int(index[position])
        )

    def items(self) -> Iterator[Tuple[Vertex, Vertex]]:
        if self._table is not None:
            yield from self._table.items()
            return
        for v in self.domain.vertices():
            yield v, self(v)

    def arrays(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        if self._levels is None:
            self.domain.require_regular('Vectorized vertex maps')
            self.codomain.require_regular('Vectorized vertex maps')
            levels = []
            for n in range(self.domain.depth + 1):
                images = [self._table[v]
                          for v in self.domain.vertices_at_level(n)]
                levels.append((
                    np.array([y.level for y in images], dtype=np.int64),
                    np.array([self.codomain.index_of(y) for y in images],
                             dtype=np.int64),
                ))
            self._levels = levels
        return self._levels

    def flat(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Domain (level, index) and image (level, index) of every vertex."""
        arrays = self.arrays()
        domain_level = np.concatenate([
            np.full(len(lv), n, dtype=np.int64)
            for n, (lv, _) in enumerate(arrays)
        ])
        domain_index = np.concatenate([
            np.arange(len(lv), dtype=np.int64) for lv, _ in arrays
        ])
        return (
            domain_level, domain_index,
            np.concatenate([lv for lv, _ in arrays]),
            np.concatenate([ix for _, ix in arrays]),
        )


def snowflake_map(domain: BoundarySpace, codomain: BoundarySpace) \
        -> BoundaryMap:
    if domain.branching != codomain.branching \
            or domain.depth != codomain.depth:
        raise ValidationError(
            'A snowflake map needs the same branching and depth on both sides'
        )
    sigma = codomain.epsilon / domain.epsilon
    return BoundaryMap(
        domain, codomain, np.arange(domain.size), provenance=SNOWFLAKE,
        eta=EtaProfile(sigma, sigma, 1.0)
    )


@dataclass
class QsReport:
    statistic: float
    witness: Optional[Tuple[str, str, str]]
    evaluated: int
    degenerate: int
    exhaustive: bool

    @property
    def passed(self) -> bool:
        return self.statistic <= 1 + ENVELOPE_TOLERANCE


def _distortions(f: BoundaryMap, chunk) \
        -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    zeta, xi, chi = chunk
    domain = f.domain
    near = domain.split_levels(zeta, xi)
    far = domain.split_levels(zeta, chi)
    t = np.exp(-domain.epsilon * (near - far))
    image_near, hidden_near = f.image_splits(zeta, xi)
    image_far, hidden_far = f.image_splits(zeta, chi)
    distortion = np.exp(-f.codomain.epsilon * (image_near - image_far))
    return near - far, t, distortion, ~(hidden_near | hidden_far)


def qs_check(
        f: BoundaryMap,
        eta: EtaProfile,
        triple_set: Optional[TripleSet] = None,
        seed: int = 0
) -> QsReport:
    triple_set = triple_set or triples(f.domain, seed)
    statistic, witness = 0.0, None
    evaluated = degenerate = 0
    for chunk in triple_set.chunks():
        _, t, distortion, usable = _distortions(f, chunk)
        degenerate += int(np.sum(~usable))
        evaluated += int(np.sum(usable))
        if not usable.any():
            continue
        ratio = np.where(usable, distortion / eta(t), -np.inf)
        worst = int(np.argmax(ratio))
        if ratio[worst] > statistic:
            statistic = float(ratio[worst])
            witness = tuple(
                f.domain.tree.serialize(f.domain.cell(int(axis[worst])))
                for axis in chunk
            )
    if degenerate:
        logging.warning(f'Skipped {degenerate} triples with unresolved images')
    return QsReport(statistic, witness, evaluated, degenerate,
                    triple_set.exhaustive)


def _bucket_maxima(f: BoundaryMap, triple_set: TripleSet) \
        -> Dict[int, Tuple[float, float]]:
    buckets: Dict[int, Tuple[float, float]] = {}
    count = 0
    for chunk in triple_set.chunks():
        gap, t, distortion, usable = _distortions(f, chunk)
        count += int(np.sum(usable))
        gap, t, distortion = gap[usable], t[usable], distortion[usable]
        for key in np.unique(gap):
            chosen = gap == key
            best = float(np.max(distortion[chosen]))
            previous = buckets.get(int(key), (0.0, 0.0))[1]
            buckets[int(key)] = (float(t[chosen][0]), max(best, previous))
    if count < MIN_FIT_TRIPLES:
        raise TooFewTriplesError(
            f'Only {count} resolvable triples, need {MIN_FIT_TRIPLES}'
        )
    return buckets


def _dominating_constant(
        t: np.ndarray, distortion: np.ndarray, alpha1: float, alpha2: float
) -> float:
    bound = np.where(t <= 1, t ** alpha1, t ** alpha2)
    return float(np.max(distortion / bound))


def fit_eta(f: BoundaryMap, triple_set: Optional[TripleSet] = None,
            seed: int = 0) -> EtaProfile:
    """Power profile fitted to the maximal distortion per distance ratio."""
    triple_set = triple_set or triples(f.domain, seed)
    buckets = _bucket_maxima(f, triple_set)
    t = np.array([value[0] for value in buckets.values()])
    distortion = np.array([value[1] for value in buckets.values()])
    slopes = []
    for side in (t <= 1, t >= 1):
        if np.sum(side) >= 2:
            slopes.append(float(np.polyfit(
                np.log(t[side]), np.log(distortion[side]), 1
            )[0]))
        else:
            slopes.append(None)
    if slopes[0] is None and slopes[1] is None:
        raise TooFewTriplesError('Too few distance ratios to fit a profile')
    alpha1 = slopes[0] if slopes[0] is not None else slopes[1]
    alpha2 = slopes[1] if slopes[1] is not None else slopes[0]
    if alpha1 <= 0 or alpha2 <= 0:
        raise ConditionFailure(
            f'Fitted exponents ({alpha1}, {alpha2}) are not positive'
        )
    A = _dominating_constant(t, distortion, alpha1, alpha2)
    return EtaProfile(alpha1, alpha2, A)


def eta_from_rqi(
        f: BoundaryMap,
        report: 'RqiReport',
        triple_set: Optional[TripleSet] = None,
        seed: int = 0
) -> EtaProfile:
    """Profile with the exponents an RQI forces and a computed constant."""
    ratio = f.codomain.epsilon / f.domain.epsilon
    alpha1, alpha2 = report.L1 * ratio, report.L2 * ratio
    buckets = _bucket_maxima(f, triple_set or triples(f.domain, seed))
    t = np.array([value[0] for value in buckets.values()])
    distortion = np.array([value[1] for value in buckets.values()])
    return EtaProfile(
        alpha1, alpha2,
        max(_dominating_constant(t, distortion, alpha1, alpha2), 1.0)
    )


def _lca_arrays(level_a, index_a, level_b, index_b, branching):
    meet = common_prefix_levels(level_a, index_a, level_b, index_b, branching)
    return meet, ancestor_index(level_a, index_a, meet, branching)


def extend_qs_to_tree(f: BoundaryMap) -> VertexMap:
    domain, codomain = f.domain, f.codomain
    branching = domain.branching
    level, index = f.known.copy(), f.prefix_indices()
    levels = [(level, index)]
    for _ in range(domain.depth):
        level = level.reshape(-1, branching)
        index = index.reshape(-1, branching)
        meet_level, meet_index = level[:, 0], index[:, 0]
        for c in range(1, branching):
            meet_level, meet_index = _lca_arrays(
                meet_level, meet_index, level[:, c], index[:, c],
                codomain.branching
            )
        level, index = meet_level, meet_index
        levels.append((level, index))
    levels.reverse()
    levels[0] = (np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64))
    return VertexMap(
        domain.tree, codomain.tree, levels=levels,
        provenance=EXTENDED_FROM_QS, eta=f.eta,
        epsilons=(domain.epsilon, codomain.epsilon),
    )


def is_order_preserving(F: VertexMap) -> bool:
    arrays = F.arrays()
    branching = F.codomain.branching
    for n in range(1, F.domain.depth + 1):
        parent_level = np.repeat(arrays[n - 1][0], F.domain.branching)
        parent_index = np.repeat(arrays[n - 1][1], F.domain.branching)
        level, index = arrays[n]
        below = (parent_level <= level) & (
            ancestor_index(level, index, parent_level, branching)
            == parent_index
        )
        if not below.all():
            return False
    return True


def qs_rqi_constants(eta: EtaProfile, epsilon_x: float, epsilon_y: float) \
        -> Tuple[float, float, float]:
    return (
        eta.alpha1 * epsilon_x / epsilon_y,
        eta.alpha2 * epsilon_x / epsilon_y,
        max(2 * math.log(eta.A) / epsilon_y, 0.0),
    )


@dataclass
class RqiReport:
    L1: float
    L2: float
    Lambda: float
    density_radius: float
    pairs: int
    exhaustive: bool
    theoretical: Optional[Tuple[float, float, float]] = None
    violations: int = 0

    @property
    def L(self) -> float:
        if self.L1 <= 0:
            return math.inf
        return max(self.L2, 1 / self.L1)


def _vertex_pairs(count: int, seed: int) -> Tuple[np.ndarray, np.ndarray,
                                                   bool]:
    i, j = cell_pairs(count, seed)
    return i, j, count <= EXHAUSTIVE_PAIR_VERTICES


def _fit_envelope(d: np.ndarray, D: np.ndarray) -> Tuple[float, float, float]:
    """Tightest L1 d - Lambda <= D <= L2 d + Lambda with L1 <= L2."""
    distances = np.unique(d)
    lowest = np.array([D[d == k].min() for k in distances], dtype=float)
    highest = np.array([D[d == k].max() for k in distances], dtype=float)
    distances = distances.astype(float)
    mean = float(distances.mean())
    zeros, ones = np.zeros_like(distances), np.ones_like(distances)
    fit = linprog(
        c=[-mean, mean, 2.0],
        A_ub=np.vstack([
            np.column_stack([distances, zeros, -ones]),
            np.column_stack([zeros, -distances, -ones]),
            [[1.0, -1.0, 0.0]],
        ]),
        b_ub=np.concatenate([lowest, -highest, [0.0]]),
        bounds=[(0, None), (0, None), (0, None)],
        method='highs',
    )
    if not fit.success:
        raise ConditionFailure('Envelope fit did not converge')
    L1, L2, Lambda = (float(value) for value in fit.x)
    return L1, L2, Lambda


def density_radius(F: VertexMap, scan_depth: int) -> float:
    """Largest distance from a codomain vertex to the image of F."""
    _, _, image_level, image_index = F.flat()
    branching = F.codomain.branching
    best = np.array([np.inf])
    radius = 0.0
    for level in range(scan_depth + 1):
        size = branching ** level
        if size > DENSITY_SCAN_LIMIT:
            logging.warning(f'Density scan stopped at level {level - 1}')
            break
        deepest = np.full(size, np.inf)
        below = image_level >= level
        np.minimum.at(
            deepest,
            ancestor_index(image_level[below], image_index[below], level,
                           branching),
            image_level[below].astype(float),
        )
        best = np.minimum(np.repeat(best, branching) if level else best,
                          deepest - 2 * level)
        radius = max(radius, float(np.max(level + best)))
    return radius


def rqi_check(F: VertexMap, seed: int = 0) -> RqiReport:
    domain_level, domain_index, image_level, image_index = F.flat()
    i, j, exhaustive = _vertex_pairs(len(domain_level), seed)
    d = comb_distances(domain_level[i], domain_index[i], domain_level[j],
                       domain_index[j], F.domain.branching)
    D = comb_distances(image_level[i], image_index[i], image_level[j],
                       image_index[j], F.codomain.branching)
    theoretical = None
    violations = 0
    if F.provenance == EXTENDED_FROM_QS and F.eta is not None \
            and F.epsilons is not None:
        theoretical = qs_rqi_constants(F.eta, *F.epsilons)
        L1, L2, bound = theoretical
        violations = int(np.sum(
            (D < L1 * d - bound - ENVELOPE_TOLERANCE)
            | (D > L2 * d + bound + ENVELOPE_TOLERANCE)
        ))
        Lambda = float(max(np.max(L1 * d - D), np.max(D - L2 * d), 0.0))
        if violations:
            logging.warning(f'{violations} pairs break the envelope '
                            f'({L1}, {L2}, {bound})')
    else:
        L1, L2, Lambda = _fit_envelope(d, D)
    if not L1 > ENVELOPE_TOLERANCE:
        at = int(np.argmax(d - D))
        raise ConditionFailure(
            f'Map is not a rough quasi-isometry: distances collapse '
            f'(L1={L1:.3g})',
            tuple(
                F.domain.serialize(F.domain.vertex_at(
                    int(domain_level[k]), int(domain_index[k])
                ))
                for k in (i[at], j[at])
            )
        )
    scan = min(math.floor(F.domain.depth * L1), F.codomain.depth)
    return RqiReport(
        L1=L1, L2=L2, Lambda=Lambda,
        density_radius=density_radius(F, scan),
        pairs=len(d), exhaustive=exhaustive,
        theoretical=theoretical, violations=violations,
    )


def stabilization_window(F: VertexMap, report: RqiReport) -> int:
    if is_order_preserving(F):
        return 0
    L = report.L
    return min(math.ceil(L * (L + 2 * report.Lambda + 1)), F.domain.depth)


def boundary_map_from_rqi(
        F: VertexMap,
        report: RqiReport,
        epsilons: Optional[Tuple[float, float]] = None,
        threshold: float = UNSTABLE_THRESHOLD
) -> BoundaryMap:
    epsilons = epsilons or F.epsilons
    if epsilons is None:
        raise ValidationError('Boundary maps need both metric exponents')
    arrays = F.arrays()
    depth = F.domain.depth
    branching = F.domain.branching
    target = F.codomain.branching
    window = stabilization_window(F, report)
    level, index = arrays[depth]
    if window:
        cells = np.arange(branching ** depth, dtype=np.int64)
        anchor = cells // branching
        tail_level = arrays[depth - 1][0][anchor]
        tail_index = arrays[depth - 1][1][anchor]
        for n in range(depth - 2, depth - window - 1, -1):
            anchor = cells // branching ** (depth - n)
            tail_level, tail_index = _lca_arrays(
                tail_level, tail_index, arrays[n][0][anchor],
                arrays[n][1][anchor], target
            )
        level, index = _lca_arrays(
            tail_level, tail_index, level, index, target
        )
        unstable = level < tail_level
        share = float(np.mean(unstable))
        if share:
            logging.warning(f'{share:.1%} of the cells did not stabilize')
        if share > threshold:
            raise ResolutionError(
                f'{share:.1%} of the cells are unstabilized at depth {depth}'
            )
    resolution = max(
        math.ceil(report.L2 * depth) + math.ceil(report.Lambda),
        int(level.max()), 1
    )
    if resolution * math.log2(target) > 62:
        raise ResolutionError(f'Codomain depth {resolution} is too deep')
    domain = BoundarySpace(F.domain, epsilons[0])
    codomain = BoundarySpace(F.codomain.with_depth(resolution), epsilons[1])
    images = index * np.power(target, resolution - level, dtype=np.int64)
    return BoundaryMap(domain, codomain, images, level,
                       provenance=INDUCED_FROM_RQI)


@dataclass
class BiHolderReport:
    a: float
    b: float
    C1: float
    C2: float
    theoretical: Optional[Tuple[float, float]] = None
    rows: List[Tuple[int, float, float, float]] = field(default_factory=list)


def bi_holder_check(
        f: BoundaryMap, report: Optional[RqiReport] = None, seed: int = 0
) -> BiHolderReport:
    """Two-sided power envelope C1 d^a <= d_f <= C2 d^b over cell pairs."""
    i, j = cell_pairs(f.domain.size, seed)
    k = f.domain.split_levels(i, j)
    split, hidden = f.image_splits(i, j)
    k, split = k[~hidden], split[~hidden]
    rows = []
    for level in np.unique(k):
        chosen = split[k == level]
        rows.append((
            int(level), float(f.domain.scale(level)),
            float(f.codomain.scale(chosen.max())),
            float(f.codomain.scale(chosen.min())),
        ))
    if not rows:
        raise ResolutionError('No resolvable cell pairs')
    d = np.array([row[1] for row in rows])
    low = np.array([row[2] for row in rows])
    high = np.array([row[3] for row in rows])
    if len(rows) >= 2:
        a = float(np.polyfit(np.log(d), np.log(low), 1)[0])
        b = float(np.polyfit(np.log(d), np.log(high), 1)[0])
    else:
        a = b = f.codomain.epsilon / f.domain.epsilon
    theoretical = None
    if report is not None:
        ratio = f.codomain.epsilon / f.domain.epsilon
        theoretical = (report.L2 * ratio, report.L1 * ratio)
    return BiHolderReport(
        a=a, b=b,
        C1=float(np.min(low / d ** a)),
        C2=float(np.max(high / d ** b)),
        theoretical=theoretical, rows=rows,
    )


def snowflake_holder_constant(domain: BoundarySpace,
                              codomain: BoundarySpace) -> float:
    sigma = codomain.epsilon / domain.epsilon
    return 2 / codomain.epsilon * (domain.epsilon / 2) ** sigma


@dataclass(frozen=True)
class MapConstants:
    L: float
    Lambda: float
    tau: float
    tau_prime: float
    C: float
    s0: float
    r0: float
    t0: float
    t1: float

    @classmethod
    def build(cls, report: RqiReport, holder: BiHolderReport,
              domain: BoundarySpace) -> 'MapConstants':
        L, Lambda = report.L, report.Lambda
        tau = (L + Lambda) * (2 * L ** 2 + 3 * Lambda * L + 1) + 1
        tau_prime = L + Lambda + 1
        C = L ** 2 * (2 * tau_prime + Lambda) + Lambda + tau_prime
        s0 = L * (3 * C + 2 * Lambda + L)
        r0 = (holder.C1 / holder.C2
              * (domain.diameter / 3) ** holder.a) ** (1 / holder.b)
        t0 = math.exp(-domain.epsilon * s0)
        return cls(L, Lambda, tau, tau_prime, C, s0, r0, t0, 1 / t0)


@dataclass
class OrderReport:
    reversals: int
    evaluated: int
    witness: Optional[Tuple[str, str, str]] = None

    @property
    def vacuous(self) -> bool:
        return self.evaluated == 0


def order_check(
        f: BoundaryMap,
        constants: MapConstants,
        triple_set: Optional[TripleSet] = None,
        seed: int = 0
) -> OrderReport:
    """Image order reversals among close triples with separated splits."""
    triple_set = triple_set or triples(f.domain, seed)
    reversals = evaluated = 0
    witness = None
    for zeta, xi, chi in triple_set.chunks():
        near = f.domain.split_levels(zeta, xi)
        far = f.domain.split_levels(zeta, chi)
        image_near, hidden_near = f.image_splits(zeta, xi)
        image_far, hidden_far = f.image_splits(zeta, chi)
        chosen = (f.domain.scale(far) <= constants.r0) \
            & (near - far >= constants.s0) & ~hidden_near & ~hidden_far
        evaluated += int(np.sum(chosen))
        reversed_ = chosen & (image_near <= image_far)
        reversals += int(np.sum(reversed_))
        if witness is None and reversed_.any():
            at = int(np.argmax(reversed_))
            witness = tuple(
                f.domain.tree.serialize(f.domain.cell(int(axis[at])))
                for axis in (zeta, xi, chi)
            )
    return OrderReport(reversals, evaluated, witness)


@dataclass
class MorseReport:
    deviation: int
    tau: float

    @property
    def passed(self) -> bool:
        return self.deviation <= self.tau


def _set_distance(v: Vertex, targets: Iterable[Vertex]) -> int:
    return min(comb_distance(v, t) for t in targets)


def morse_tracking_check(
        F: VertexMap, f: BoundaryMap, cell: Cell, constants: MapConstants
) -> MorseReport:
    cell = f.domain.cell(cell)
    images = [F(cell.prefix(n)) for n in range(cell.level + 1)]
    line = list(geodesic(F(ROOT), f(cell)))
    deviation = max(
        max(_set_distance(v, line) for v in images),
        max(_set_distance(v, images) for v in line),
    )
    return MorseReport(deviation, constants.tau)


def _require_connected(target: List[Vertex]) -> None:
    members = set(target)
    tops = [v for v in target
            if v.is_root or v.prefix(v.level - 1) not in members]
    if len(tops) != 1:
        raise ValidationError(
            f'Projection target is not connected: {len(tops)} components'
        )


def nearest_point_projection(target: Iterable[Vertex], x: Vertex) -> Vertex:
    target = sorted(target)
    if not target:
        raise ValidationError('Cannot project onto an empty vertex set')
    _require_connected(target)
    return min(target, key=lambda t: comb_distance(x, t))


def project_set(target: Iterable[Vertex], source: Iterable[Vertex]) \
        -> set:
    target = sorted(target)
    if not target:
        raise ValidationError('Cannot project onto an empty vertex set')
    _require_connected(target)
    return {min(target, key=lambda t: comb_distance(x, t)) for x in source}


@dataclass
class PullbackReport:
    function: TreeFunction
    gradient: EdgeGradient
    ratio: float
    constant: bool
    C0: float
    upper_gradient: bool


def besov_weights(branching: int, epsilon: float, p: float, theta: float) \
        -> MetricWeights:
    return MetricWeights(epsilon, math.log(branching)
                         + p * epsilon * (1 - theta))


def compose_tree(u: TreeFunction, F: VertexMap) -> TreeFunction:
    """v = u o F on the domain tree."""
    arrays = F.arrays()
    deepest = max(int(level.max()) for level, _ in arrays)
    if deepest > u.tree.depth:
        raise ValidationError(
            f'Images reach level {deepest}, the function stops at '
            f'{u.tree.depth}'
        )
    flat = np.concatenate(u.levels)
    offsets = np.concatenate([[0], np.cumsum([len(v) for v in u.levels])])
    return TreeFunction(F.domain, [
        flat[offsets[level] + index] for level, index in arrays
    ])


def _pulled_gradient(
        F: VertexMap, g: EdgeGradient, weights_x: MetricWeights,
        weights_y: MetricWeights, multiplier: float
) -> EdgeGradient:
    arrays = F.arrays()
    target = F.codomain.branching
    levels = [np.zeros(0)]
    for j in range(1, F.domain.depth + 1):
        top_level = np.repeat(arrays[j - 1][0], F.domain.branching)
        top_index = np.repeat(arrays[j - 1][1], F.domain.branching)
        level, index = arrays[j]
        meet = common_prefix_levels(top_level, top_index, level, index,
                                    target)
        largest = np.zeros(level.shape)
        for step in range(1, int(max(top_level.max(), level.max())) + 1):
            scale = math.exp(-weights_y.epsilon * (step - 1))
            for side_level, side_index in ((top_level, top_index),
                                           (level, index)):
                on_path = (meet < step) & (step <= side_level)
                if not on_path.any():
                    continue
                edges = g.levels[step][
                    ancestor_index(side_level, side_index, step, target)
                ]
                largest = np.maximum(
                    largest, np.where(on_path, scale * edges, 0.0)
                )
        levels.append(
            multiplier * math.exp(weights_x.epsilon * j) * largest
        )
    return EdgeGradient(F.domain, levels)


def is_upper_gradient(v: TreeFunction, g: EdgeGradient,
                      weights: MetricWeights) -> bool:
    for j in range(1, v.tree.depth + 1):
        change = np.abs(v.levels[j] - v.parent_values(j))
        reach = g.levels[j] * float(weights.length(j - 1, j))
        if np.any(change > reach * (1 + 1e-9) + 1e-12):
            return False
    return True


def weight_condition(
        F: VertexMap, p: float, weights_x: MetricWeights,
        weights_y: MetricWeights, check: bool = True
) -> float:
    """Max over vertices of (p eps_X - beta_X)|x| + (beta_Y - p eps_Y)|F(x)|."""
    arrays = F.arrays()
    rising = p * weights_x.epsilon - weights_x.beta
    falling = weights_y.beta - p * weights_y.epsilon
    maxima, worst, worst_value = [], None, -math.inf
    for n, (level, _) in enumerate(arrays):
        values = rising * n + falling * level
        at = int(np.argmax(values))
        maxima.append(float(values[at]))
        if values[at] > worst_value:
            worst_value = float(values[at])
            worst = F.domain.vertex_at(n, at)
    half = len(maxima) // 2
    if check and len(maxima) - half >= 2:
        slope = np.polyfit(np.arange(half, len(maxima)), maxima[half:], 1)[0]
        if slope > ENVELOPE_TOLERANCE:
            raise ConditionFailure(
                f'Weight condition grows with slope {slope:.4g}',
                F.domain.serialize(worst)
            )
    return worst_value


def pullback_energy(
        u: TreeFunction,
        F: VertexMap,
        p: float,
        weights_x: MetricWeights,
        weights_y: MetricWeights,
        constants: Tuple[float, float],
        gradient: Optional[EdgeGradient] = None,
        check: bool = True
) -> PullbackReport:
    """Pull an upper gradient on Y back along F and compare the energies."""
    C0 = weight_condition(F, p, weights_x, weights_y, check)
    L, Lambda = constants
    multiplier = (L + Lambda) * math.exp(
        weights_y.epsilon * (L + Lambda) + weights_x.epsilon
    )
    gradient = gradient or minimal_upper_gradient(u, weights_y)
    v = compose_tree(u, F)
    pulled = _pulled_gradient(F, gradient, weights_x, weights_y, multiplier)
    energy_x = newtonian_energy(v, p, weights_x, pulled)
    energy_y = newtonian_energy(u, p, weights_y, gradient)
    constant = energy_y == 0
    ratio = 0.0 if constant else (energy_x / energy_y) ** (1 / p)
    return PullbackReport(
        function=v, gradient=pulled, ratio=ratio, constant=constant, C0=C0,
        upper_gradient=is_upper_gradient(v, pulled, weights_x),
    )


def dimension(space: BoundarySpace) -> float:
    return space.hausdorff_dimension()


def theta_bound(eta: EtaProfile, p: float, theta_y: float, q_x: float,
                q_y: float) -> float:
    alpha = eta.alpha1 if theta_y >= q_y / p else eta.alpha2
    return q_x / p + alpha * (theta_y - q_y / p)


def compose_boundary(u: BoundaryFunction, f: BoundaryMap) -> BoundaryFunction:
    if np.any(f.known < u.resolution):
        raise ResolutionError(
            f'Images are known to fewer than {u.resolution} digits'
        )
    shift = f.codomain.depth - u.resolution
    values = u.values[f.images // f.codomain.branching ** shift]
    return BoundaryFunction(f.domain, values, f.domain.depth)


@dataclass
class PushforwardReport:
    function: BoundaryFunction
    ratio: float
    energy_ratio: float
    agreement: float
    constant: bool


def besov_pushforward(
        u: BoundaryFunction,
        f: BoundaryMap,
        p: float,
        theta_x: float,
        theta_y: float,
        eta: Optional[EtaProfile] = None,
        seed: int = 0
) -> PushforwardReport:
    eta = eta or f.eta
    if eta is None:
        raise ValidationError('The map carries no quasisymmetry profile')
    if not 0 < theta_y < 1:
        raise RegimeViolation(
            f'theta_Y={theta_y} must lie strictly between 0 and 1', (0, 1)
        )
    if u.space.tree.depth != f.codomain.depth \
            or u.space.branching != f.codomain.branching:
        raise ValidationError('The function does not live on the codomain')
    q_x, q_y = dimension(f.domain), dimension(f.codomain)
    bound = theta_bound(eta, p, theta_y, q_x, q_y)
    if not 0 < theta_x <= bound + ENVELOPE_TOLERANCE:
        raise RegimeViolation(
            f'theta_X={theta_x} exceeds the pushforward bound', (0, bound)
        )
    weights_y = besov_weights(f.codomain.branching, f.codomain.epsilon, p,
                              theta_y)
    weights_x = besov_weights(f.domain.branching, f.domain.epsilon, p,
                              theta_x)
    U, gradient = extend(u, weights_y)
    F = extend_qs_to_tree(f)
    L1, L2, Lambda = qs_rqi_constants(eta, f.domain.epsilon,
                                      f.codomain.epsilon)
    pulled = pullback_energy(
        U, F, p, weights_x, weights_y, (max(L2, 1 / L1), Lambda),
        gradient, check=False,
    )
    result = BoundaryFunction(f.domain, pulled.function.levels[-1],
                              f.domain.depth)
    deep = f.known >= u.resolution
    agreement = 0.0
    if deep.any():
        shift = f.codomain.depth - u.resolution
        direct = u.values[f.images[deep] // f.codomain.branching ** shift]
        agreement = float(np.max(np.abs(direct - result.values[deep])))
        if agreement > ENVELOPE_TOLERANCE:
            at = int(np.flatnonzero(deep)[np.argmax(
                np.abs(direct - result.values[deep])
            )])
            raise ConditionFailure(
                'Pushforward disagrees with the direct composition',
                f.domain.tree.serialize(f.domain.cell(at))
            )
    source = besov_seminorm_sum(u, BesovParams(p, theta_y), seed)
    image = besov_seminorm_sum(result, BesovParams(p, theta_x), seed)
    constant = source == 0
    return PushforwardReport(
        function=result,
        ratio=0.0 if constant else image / source,
        energy_ratio=pulled.ratio,
        agreement=agreement,
        constant=constant,
    )


def lp_pushforward_check(u: BoundaryFunction, f: BoundaryMap, p: float,
                         eta: Optional[EtaProfile] = None) -> float:
    eta = eta or f.eta
    q_x, q_y = dimension(f.domain), dimension(f.codomain)
    if eta is not None and q_x < eta.alpha1 * q_y - ENVELOPE_TOLERANCE:
        raise RegimeViolation(
            f'Q_X={q_x} is below alpha1 Q_Y={eta.alpha1 * q_y}'
        )
    source = lp_norm(u, p)
    if source == 0:
        return 0.0
    return lp_norm(compose_boundary(u, f), p) / source


def biholder_besov_bound(theta: float, a: float, q_x: float, q_y: float,
                         p: float) -> float:
    return a * theta + (a * q_y - q_x) / p


def inverse_besov_bound(eta: EtaProfile, p: float, theta_x: float,
                        q_x: float, q_y: float) -> float:
    """Largest theta_Y the inverse map pushes B^theta_X into."""
    inverse = EtaProfile(*eta.inverse_exponents(), eta.A)
    return theta_bound(inverse, p, theta_x, q_y, q_x)


def snowflake_besov_exponent(theta: float, sigma: float,
                             q: float) -> Tuple[float, float]:
    if not sigma > 0:
        raise ParameterViolation(f'Snowflake power must be positive: {sigma}')
    return theta / sigma, q / sigma


def example_binary_ternary(depth: int) -> Tuple[VertexMap, VertexMap]:
    """G from the binary tree onto the ternary tree, and its section H.

    A binary 1 is held back: the next digit decides whether it becomes
    a ternary 1 (followed by 0) or a ternary 2 (followed by 1).
    """
    binary, ternary = TreeSpec(depth, 2), TreeSpec(depth, 3)
    level = np.zeros(1, dtype=np.int64)
    index = np.zeros(1, dtype=np.int64)
    pending = np.zeros(1, dtype=bool)
    forward = [(level, index)]
    for _ in range(depth):
        level = np.repeat(level, 2)
        index = np.repeat(index, 2)
        pending = np.repeat(pending, 2)
        digit = np.tile([0, 1], len(level) // 2)
        append = np.where(pending, digit + 1, 0)
        grow = pending | (digit == 0)
        level = level + grow
        index = np.where(grow, index * 3 + append, index)
        pending = ~pending & (digit == 1)
        forward.append((level, index))

    section_tree = TreeSpec(2 * depth, 2)
    level = np.zeros(1, dtype=np.int64)
    index = np.zeros(1, dtype=np.int64)
    backward = [(level, index)]
    for _ in range(depth):
        level = np.repeat(level, 3)
        index = np.repeat(index, 3)
        digit = np.tile([0, 1, 2], len(level) // 3)
        level = level + np.where(digit == 0, 1, 2)
        index = np.where(digit == 0, index * 2, index * 4 + digit + 1)
        backward.append((level, index))
    return (
        VertexMap(binary, ternary, levels=forward),
        VertexMap(ternary, section_tree, levels=backward),
    )


@dataclass
class RigidityReport:
    verdict: str
    witness: Optional[Tuple[str, ...]] = None


def _violation(name: str, tree: TreeSpec, *vertices: Vertex) \
        -> RigidityReport:
    return RigidityReport(name, tuple(tree.serialize(v) for v in vertices))


def _on_geodesic(a: Vertex, b: Vertex, y: Vertex) -> bool:
    return comb_distance(a, y) + comb_distance(y, b) == comb_distance(a, b)


def rigidity_check(G: VertexMap, margin: int = 1, geodesic_depth: int = 6) \
        -> RigidityReport:
    """Injective, geodesic-preserving, dense maps fixing the root are
    isometries; returns the first broken hypothesis otherwise."""
    domain, codomain = G.domain, G.codomain
    table = dict(G.items())

    seen: Dict[Vertex, Vertex] = {}
    for v, y in sorted(table.items()):
        if y in seen:
            return _violation('not-injective', domain, seen[y], v)
        seen[y] = v

    level = min(geodesic_depth, domain.depth)
    cells = list(domain.vertices_at_level(level))
    for a, b in itertools.combinations(cells, 2):
        images = [table[v] for v in geodesic(a, b)]
        ends = max(itertools.combinations(images, 2),
                   key=lambda pair: comb_distance(*pair))
        for y in images:
            if not _on_geodesic(ends[0], ends[1], y):
                return _violation('not-geodesic', codomain, ends[0], y,
                                  ends[1])

    covered = set()
    for y in table.values():
        covered.update(y.prefix(n) for n in range(y.level + 1))
    for y in codomain.vertices(max(codomain.depth - margin, 0)):
        if y not in covered:
            return _violation('not-dense', codomain, y)

    if table[ROOT] != ROOT and codomain.child_count(ROOT) < 3:
        return _violation('root-moved', codomain, table[ROOT])

    for (a, ya), (b, yb) in itertools.combinations(sorted(table.items()), 2):
        if comb_distance(ya, yb) != comb_distance(a, b):
            return _violation('not-isometry', domain, a, b)
    return RigidityReport(ISOMETRY)


def rerooted_isometry(depth: int) -> VertexMap:
    """An isometry of the 3-regular tree moving the root to vertex 0."""
    domain = TreeSpec(depth, rule=RootedHomogeneous(2))
    codomain = TreeSpec(depth + 1, rule=RootedHomogeneous(2))

    def shift(v: Vertex) -> Vertex:
        address = v.address
        if not address:
            return Vertex((0,))
        head, tail = address[0], address[1:]
        if head in (0, 1):
            return Vertex((0, head) + tail)
        if not tail:
            return ROOT
        return Vertex((tail[0] + 1,) + tail[1:])

    return VertexMap.from_function(domain, codomain, shift)
