import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

from cantortree.boundary import BoundarySpace
from cantortree.errors import ParameterViolation, RegimeViolation, \
    ValidationError
from cantortree.measure import MetricWeights
from cantortree.spaces import BesovParams, BoundaryFunction, EdgeGradient, \
    LogFunction, RadialFunction, RecursiveGammaFunction, TreeFunction, \
    besov_report, besov_scale, besov_seminorm_sum, ep_at_level, \
    gamma_interval, holder_seminorm, layer_average, lp_norm, \
    minimal_upper_gradient, newtonian_energy, recursive_gamma_function
from cantortree.tree import TreeSpec

CONVERGENT = 'convergent'
DIVERGENT = 'divergent'
BORDERLINE = 'borderline'
INSUFFICIENT = 'insufficient'
NOT_APPLICABLE = 'not-applicable'

CONVERGENT_FACTOR = 0.9
DIVERGENT_FACTOR = 0.99
HOLDER_TOLERANCE = 0.05

AnyTreeFunction = Union[TreeFunction, RadialFunction]


@dataclass(frozen=True)
class TraceParams:
    p: float
    theta: float
    sharp: float

    @property
    def has_trace_space(self) -> bool:
        return self.sharp > 0

    @property
    def trace_admissible(self) -> bool:
        return 0 < self.theta <= self.sharp

    @property
    def extension_admissible(self) -> bool:
        return self.theta > 0 and self.theta >= self.sharp

    @property
    def classification(self) -> str:
        if not self.has_trace_space:
            return 'no-trace-space'
        if self.theta == self.sharp:
            return 'sharp'
        return 'trace-admissible' if self.trace_admissible \
            else 'extension-admissible'

    @property
    def besov(self) -> BesovParams:
        return BesovParams(self.p, self.theta)


def sharp_theta(
        p: float,
        weights: MetricWeights,
        branching: int,
        theta: Optional[float] = None
) -> TraceParams:
    if not p >= 1:
        raise ParameterViolation(f'Need p >= 1, got {p}', (1, math.inf))
    weights.require_finite_measure(branching)
    sharp = 1 - (weights.beta - math.log(branching)) / (p * weights.epsilon)
    if sharp <= 0:
        logging.warning(f'No trace space for p={p}: sharp theta is {sharp}')
    return TraceParams(p, sharp if theta is None else theta, sharp)


@dataclass
class TraceReport:
    function: BoundaryFunction
    kind: str
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None


@dataclass
class RatioReport:
    value: float
    numerator: float
    denominator: float
    constant: bool = False


@dataclass
class ProbeReport:
    gamma: float
    theta: float
    depths: List[int]
    partial_sums: List[float]
    increments: List[float]
    factor: float
    verdict: str
    expected: str
    slope: float
    expected_slope: float
    residual: float
    rows: List[Tuple[int, float, float]] = field(default_factory=list)


@dataclass
class HolderReport:
    case: Optional[str]
    alpha: Optional[float]
    seminorms: List[float] = field(default_factory=list)
    stable: bool = False

    @property
    def verdict(self) -> str:
        if self.case is None:
            return NOT_APPLICABLE
        return 'stable' if self.stable else 'unstable'


def trace(u: AnyTreeFunction, weights: MetricWeights) -> BoundaryFunction:
    space = BoundarySpace(u.tree, weights.epsilon)
    if isinstance(u, RadialFunction):
        return BoundaryFunction.constant(space, u.values[-1]) \
            .refine(space.depth)
    return BoundaryFunction(space, u.levels[-1], space.depth)


def trace_report(u: AnyTreeFunction, weights: MetricWeights) -> TraceReport:
    function = trace(u, weights)
    if isinstance(u, LogFunction):
        return TraceReport(function, 'unbounded')
    if isinstance(u, RecursiveGammaFunction):
        lower, upper = u.limit_bounds()
        return TraceReport(function, 'interval', lower, upper)
    return TraceReport(function, 'vertex')


def extend(f: BoundaryFunction, weights: MetricWeights) \
        -> Tuple[TreeFunction, EdgeGradient]:
    space = f.space
    branching = space.branching
    levels = [f.values]
    for _ in range(f.resolution):
        levels.append(levels[-1].reshape(-1, branching).mean(axis=1))
    levels.reverse()
    for _ in range(f.resolution, space.depth):
        levels.append(np.repeat(levels[-1], branching))
    u = TreeFunction(space.tree, levels)
    return u, minimal_upper_gradient(u, weights)


def _ratio(numerator: float, denominator: float) -> RatioReport:
    if denominator == 0:
        return RatioReport(0.0, numerator, denominator, constant=True)
    return RatioReport(numerator / denominator, numerator, denominator)


def trace_norm_ratio(
        u: TreeFunction,
        weights: MetricWeights,
        params: TraceParams,
        gradient: Optional[EdgeGradient] = None,
        seed: int = 0
) -> RatioReport:
    if not params.trace_admissible:
        raise RegimeViolation(
            f'theta={params.theta} is not trace-admissible',
            (0, params.sharp)
        )
    gradient = gradient or minimal_upper_gradient(u, weights)
    energy = newtonian_energy(u, params.p, weights, gradient)
    seminorm = besov_seminorm_sum(trace(u, weights), params.besov, seed)
    return _ratio(seminorm, energy ** (1 / params.p))


def extension_norm_ratio(
        f: BoundaryFunction,
        weights: MetricWeights,
        params: TraceParams,
        seed: int = 0
) -> RatioReport:
    if not params.extension_admissible:
        raise RegimeViolation(
            f'theta={params.theta} is not extension-admissible',
            (max(params.sharp, 0), math.inf)
        )
    u, gradient = extend(f, weights)
    energy = newtonian_energy(u, params.p, weights, gradient)
    seminorm = besov_seminorm_sum(f, params.besov, seed)
    return _ratio(energy ** (1 / params.p), seminorm)


def lp_trace_bound(
        u: TreeFunction,
        weights: MetricWeights,
        p: float,
        gradient: Optional[EdgeGradient] = None
) -> RatioReport:
    """||Tr u||_Lp(nu) against |u(0)| + ||g_u||_Lp(mu)."""
    gradient = gradient or minimal_upper_gradient(u, weights)
    energy = newtonian_energy(u, p, weights, gradient)
    bound = abs(float(u.levels[0][0])) + energy ** (1 / p)
    return _ratio(lp_norm(trace(u, weights), p), bound)


def extension_weights(
        weights: MetricWeights,
        branching: int,
        params: TraceParams,
        depth: int
) -> np.ndarray:
    """Per-level weights e^((eps p - beta) n) r_n^(theta p - Q)."""
    dimension = math.log(branching) / weights.epsilon
    levels = np.arange(depth + 1)
    radii = 2 / weights.epsilon * np.exp((1 - levels) * weights.epsilon)
    return np.exp((weights.epsilon * params.p - weights.beta) * levels) \
        * radii ** (params.theta * params.p - dimension)


def divergence_verdict(increments: List[float]) -> Tuple[str, float]:
    if len(increments) < 5:
        return INSUFFICIENT, math.nan
    first, last = increments[-5], increments[-1]
    if first <= 0:
        return (CONVERGENT, 0.0) if last <= 0 else (DIVERGENT, math.inf)
    factor = (last / first) ** 0.25
    if factor < CONVERGENT_FACTOR:
        return CONVERGENT, factor
    if factor >= DIVERGENT_FACTOR:
        return DIVERGENT, factor
    return BORDERLINE, factor


def sharpness_probe_trace2(
        tree: TreeSpec,
        weights: MetricWeights,
        p: float,
        theta: float,
        gamma: float,
        seed: int = 0
) -> ProbeReport:
    """Besov partial sums of the recursive gamma function by depth."""
    low, high = gamma_interval(weights, tree.branching, p)
    if not low < gamma < high:
        raise ParameterViolation(
            f'gamma={gamma} outside the admissible interval', (low, high)
        )
    u = recursive_gamma_function(tree, weights, gamma)
    params = BesovParams(p, theta)
    space = BoundarySpace(tree, weights.epsilon)
    depths, sums = [], []
    for depth in range(1, tree.depth + 1):
        f = BoundaryFunction(space.with_depth(depth), u.levels[depth], depth)
        depths.append(depth)
        sums.append(besov_report(f, params, seed).value ** p)
    increments = [sums[0]] + list(np.diff(sums))
    verdict, factor = divergence_verdict(increments)

    full = BoundaryFunction(space, u.levels[-1], tree.depth)
    rows = []
    for n in range(1, tree.depth // 2 + 1):
        rows.append((n, besov_scale(space, n), ep_at_level(full, n, p, seed)[0]))
    usable = [row for row in rows if row[2] > 0]
    slope, residual = math.nan, math.nan
    if len(usable) >= 2:
        x = np.log([row[1] for row in usable])
        y = np.log([row[2] for row in usable])
        fit, extra = np.polyfit(x, y, 1, full=True)[:2]
        slope = float(fit[0])
        residual = float(extra[0]) if len(extra) else 0.0
    expected = DIVERGENT if theta >= 1 - gamma / weights.epsilon \
        else CONVERGENT
    return ProbeReport(
        gamma=gamma, theta=theta, depths=depths, partial_sums=sums,
        increments=increments, factor=factor, verdict=verdict,
        expected=expected, slope=slope,
        expected_slope=(weights.epsilon - gamma) / weights.epsilon,
        residual=residual, rows=rows,
    )


def holder_case(
        p: float, theta: float, dimension: float
) -> Tuple[Optional[str], Optional[float]]:
    if dimension < 1 and theta >= (dimension - 1) / p + 1:
        return 'i', 1 - 1 / p
    if dimension / p < theta <= (dimension - 1) / p + 1 and theta < 1:
        return 'ii', theta - dimension / p
    if dimension >= 1 and theta >= 1:
        return 'iii', (1 - dimension / p) / 2
    return None, None


def holder_embedding_check(
        f: BoundaryFunction, p: float, theta: float
) -> HolderReport:
    if not p >= 1:
        raise ValidationError(f'Need p >= 1, got {p}')
    case, alpha = holder_case(p, theta, f.space.hausdorff_dimension())
    if case is None or not alpha > 0:
        return HolderReport(None, None)
    seminorms = [
        holder_seminorm(layer_average(f, n), alpha)
        for n in range(1, f.resolution + 1)
    ]
    stable = len(seminorms) < 2 \
        or seminorms[-1] <= seminorms[-2] * (1 + HOLDER_TOLERANCE)
    return HolderReport(case, alpha, seminorms, stable)
