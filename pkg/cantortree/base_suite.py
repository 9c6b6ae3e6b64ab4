import math
from functools import partial
from typing import TYPE_CHECKING, Any, Dict, List

import numpy as np

from cantortree.boundary import BoundarySpace
from cantortree.chronicle import Chronicle
from cantortree.data.experiment import ExperimentConfig
from cantortree.errors import AcceptanceFailure, ValidationError
from cantortree.maps import ISOMETRY, MapConstants, RqiReport, VertexMap, \
    besov_pushforward, bi_holder_check, boundary_map_from_rqi, cell_pairs, \
    eta_from_rqi, example_binary_ternary, extend_qs_to_tree, fit_eta, \
    morse_tracking_check, order_check, qs_check, rerooted_isometry, \
    rigidity_check, rqi_check, snowflake_map, triples
from cantortree.measure import WeightedTree, ball_sample_grid, \
    nested_ball_samples
from cantortree.spaces import BesovParams, BoundaryFunction, TreeFunction, \
    besov_report, besov_seminorm_double_integral, ep_at_level, \
    log_function, energy_report, minimal_upper_gradient, power_function
from cantortree.suite import Suite, SuiteParam
from cantortree.trace import extend, extension_norm_ratio, sharp_theta, \
    sharpness_probe_trace2, trace, trace_norm_ratio
from cantortree.tree import comb_distances
from cantortree.utils import relative_difference

if TYPE_CHECKING:
    from cantortree.runner import ExperimentRunner

MEASURE_EXP = 'measure'
POINCARE_EXP = 'poincare'
BESOV_EXP = 'besov'
TRACE_EXP = 'trace'
MAPS_EXP = 'maps'
RIGIDITY_EXP = 'rigidity'

DOUBLING_DRIFT = 0.05
POINCARE_DRIFT = 0.10
TRACE_DRIFT = 0.10
PUSHFORWARD_DRIFT = 0.15
SLOPE_TOLERANCE = 0.05
EXPONENT_TOLERANCE = 0.05
DIMENSION_SHIFT = 0.3
AHLFORS_CENTERS = 1024


class BaseSuite(Suite):
    def __init__(self, runner: 'ExperimentRunner'):
        super().__init__(runner)

        self.register_experiment(
            name=MEASURE_EXP,
            handler=self.measure,
            help_msg='Doubling, dimension, Ahlfors and ultrametric sweeps.',
            params=[SuiteParam('samples', optional=True, default=20)],
            sampled=True,
        )
        self.register_experiment(
            name=POINCARE_EXP,
            handler=self.poincare,
            help_msg='Largest fitted Poincare constant across depths.',
            params=[
                SuiteParam('p', optional=True, default=1.0, converter=float),
                SuiteParam('samples', optional=True, default=50),
                SuiteParam('balls', optional=True, default=50),
            ],
            sampled=True,
        )
        self.register_experiment(
            name=BESOV_EXP,
            handler=self.besov,
            help_msg='E_p modulus slopes and Besov seminorms of a generator.',
            params=[
                SuiteParam('p', optional=True, default=2.0, converter=float),
                SuiteParam('function', optional=True, default='power'),
            ],
        )
        self.register_experiment(
            name=TRACE_EXP,
            handler=self.trace,
            help_msg='Trace and extension norm ratios at a given theta.',
            params=[
                SuiteParam('p', optional=True, default=2.0, converter=float),
                SuiteParam('samples', optional=True, default=30),
                SuiteParam('function', optional=True, default='random'),
            ],
            sampled=True,
        )
        self.register_experiment(
            name=MAPS_EXP,
            handler=self.maps,
            help_msg='Quasisymmetry and rough quasiisometry round trips.',
            params=[
                SuiteParam('codomain_epsilon', converter=float),
                SuiteParam('function', optional=True, default='snowflake'),
                SuiteParam('p', optional=True, default=2.0, converter=float),
            ],
            sampled=True,
        )
        self.register_experiment(
            name=RIGIDITY_EXP,
            handler=self.rigidity,
            help_msg='Isometry verdicts for identity, rerooted and section '
                     'maps.',
        )

    async def measure(
            self, config: ExperimentConfig, chronicle: Chronicle,
            samples: int
    ) -> Dict[str, Any]:
        points = await self.runner.sweep(
            partial(_measure_point, config, samples), config.sweep_depths
        )
        await chronicle.log_table(
            'doubling', ['depth', 'sup_doubling', 'min_ratio', 'max_ratio'],
            [(p['depth'], p['doubling'], p['min_ratio'], p['max_ratio'])
             for p in points]
        )
        await chronicle.log_table(
            'dimension', ['depth', 's', 'statistic', 's_prime',
                          'statistic_prime'],
            [(p['depth'], p['s'], p['statistic'], p['s_prime'],
              p['statistic_prime']) for p in points]
        )
        await chronicle.log_table(
            'ahlfors', ['depth', 'dimension', 'minimum', 'maximum', 'spread',
                        'ultrametric_triples', 'ultrametric_violations'],
            [(p['depth'], p['dimension'], p['ahlfors_min'], p['ahlfors_max'],
              p['spread'], p['triples'], p['violations']) for p in points]
        )

        branching = config.tree().max_branching
        for point in points:
            if point['violations']:
                raise AcceptanceFailure(
                    f'Ultrametric inequality fails at depth {point["depth"]}',
                    point['violation_witness']
                )
            if point['spread'] > branching * (1 + 1e-9):
                raise AcceptanceFailure(
                    f'Ahlfors spread {point["spread"]} exceeds K at depth '
                    f'{point["depth"]}'
                )
            if not point['statistic'] > 0:
                raise AcceptanceFailure(
                    f'Dimension statistic vanishes at depth {point["depth"]}'
                )
        _require_drift(
            [p['doubling'] for p in points], DOUBLING_DRIFT, 'doubling ratio'
        )
        primes = [p['statistic_prime'] for p in points]
        if any(b >= a for a, b in zip(primes, primes[1:])):
            raise AcceptanceFailure(
                'Dimension statistic below the critical exponent does not '
                'decrease with depth', primes
            )
        return {'points': points}

    async def poincare(
            self, config: ExperimentConfig, chronicle: Chronicle,
            p: float, samples: int, balls: int
    ) -> Dict[str, Any]:
        points = await self.runner.sweep(
            partial(_poincare_point, config, p, samples, balls),
            config.sweep_depths
        )
        await chronicle.log_table(
            'poincare', ['depth', 'max_constant', 'mean_constant', 'checks'],
            [(q['depth'], q['max_constant'], q['mean_constant'], q['checks'])
             for q in points]
        )
        _require_drift([q['max_constant'] for q in points], POINCARE_DRIFT,
                       'Poincare constant')
        return {'points': points}

    async def besov(
            self, config: ExperimentConfig, chronicle: Chronicle,
            p: float, function: str
    ) -> Dict[str, Any]:
        if function == 'power':
            return await self._besov_power(config, chronicle, p)
        if function == 'recursive':
            return await self._besov_recursive(config, chronicle, p)
        raise ValidationError(
            f'Besov generator must be "power" or "recursive", got {function}'
        )

    async def _besov_power(
            self, config: ExperimentConfig, chronicle: Chronicle, p: float
    ) -> Dict[str, Any]:
        alpha = config.alpha if config.alpha is not None else 0.3
        space = BoundarySpace(config.tree(), config.epsilon)
        f = power_function(space, 0, alpha, p)
        rows = [
            (n, float(space.scale(n)), ep_at_level(f, n, p)[0])
            for n in range(1, space.depth + 1)
        ]
        await chronicle.log_table('modulus', ['level', 't', 'E_p'], rows)
        fitted = rows[:max(2, space.depth // 2)]
        slope = float(np.polyfit(
            np.log([r[1] for r in fitted]), np.log([r[2] for r in fitted]), 1
        )[0])
        expected = (space.hausdorff_dimension() + alpha * p) / p
        results = {
            'slope': slope,
            'expected_slope': expected,
        }
        if config.theta is not None:
            params = BesovParams(p, config.theta)
            results['seminorm_sum'] = besov_report(f, params).value
            results['seminorm_integral'] = \
                besov_seminorm_double_integral(f, params)
        if relative_difference(slope, expected) > SLOPE_TOLERANCE:
            raise AcceptanceFailure(
                f'E_p slope {slope:.6g} differs from {expected:.6g}', results
            )
        return results

    async def _besov_recursive(
            self, config: ExperimentConfig, chronicle: Chronicle, p: float
    ) -> Dict[str, Any]:
        if config.gamma is None or config.theta is None:
            raise ValidationError('The recursive generator needs gamma and '
                                  'theta')
        report = sharpness_probe_trace2(
            config.tree(), config.weights(), p, config.theta, config.gamma,
            config.seed or 0
        )
        await chronicle.log_table(
            'partial_sums', ['depth', 'partial_sum', 'increment', 'verdict'],
            [(d, s, i, report.verdict) for d, s, i in zip(
                report.depths, report.partial_sums, report.increments
            )]
        )
        await chronicle.log_table('modulus', ['level', 't', 'E_p'],
                                  report.rows)
        results = {
            'gamma': report.gamma,
            'theta': report.theta,
            'slope': report.slope,
            'expected_slope': report.expected_slope,
            'residual': report.residual,
            'factor': report.factor,
            'verdict': report.verdict,
            'expected_regime': report.expected,
        }
        if relative_difference(report.slope, report.expected_slope) \
                > SLOPE_TOLERANCE:
            raise AcceptanceFailure(
                f'E_p slope {report.slope:.6g} differs from '
                f'{report.expected_slope:.6g}', results
            )
        if report.expected == 'divergent' and report.verdict == 'convergent':
            raise AcceptanceFailure(
                'Besov increments decay in the divergent regime', results
            )
        return results

    async def trace(
            self, config: ExperimentConfig, chronicle: Chronicle,
            p: float, samples: int, function: str
    ) -> Dict[str, Any]:
        if function == 'log':
            return await self._trace_log(config, chronicle, p)
        if function != 'random':
            raise ValidationError(
                f'Trace functions must be "random" or "log", got {function}'
            )
        params = sharp_theta(
            p, config.weights(), config.tree().branching, config.theta
        )
        points = await self.runner.sweep(
            partial(_trace_point, config, params, samples),
            config.sweep_depths
        )
        await chronicle.log_table(
            'ratios', ['depth', 'theta', 'extension_ratio', 'trace_ratio'],
            [(q['depth'], params.theta, q['extension'], q['trace'])
             for q in points]
        )
        for key in ('extension', 'trace'):
            values = [q[key] for q in points if q[key] is not None]
            if values and any(v > values[0] * (1 + TRACE_DRIFT)
                              for v in values[1:]):
                raise AcceptanceFailure(
                    f'Max {key} ratio grows across depths', values
                )
        return {
            'theta': params.theta,
            'sharp_theta': params.sharp,
            'classification': params.classification,
            'points': points,
        }

    async def _trace_log(
            self, config: ExperimentConfig, chronicle: Chronicle, p: float
    ) -> Dict[str, Any]:
        weights = config.weights()
        rows = []
        for depth in config.sweep_depths:
            u = log_function(config.tree(depth), weights)
            report = energy_report(u, p, weights)
            rows.append((depth, float(u.values[-1]), report.energy,
                         report.tail))
        await chronicle.log_table(
            'log_function', ['depth', 'trace_value', 'energy', 'tail'], rows
        )
        branching = config.tree().branching
        threshold = (weights.beta - math.log(branching)) / weights.epsilon
        traces = [row[1] for row in rows]
        if any(b <= a for a, b in zip(traces, traces[1:])):
            raise AcceptanceFailure('Log trace values do not grow', traces)
        if p < threshold:
            tails = [row[3] for row in rows]
            if any(b >= a for a, b in zip(tails, tails[1:])):
                raise AcceptanceFailure('Energy tails do not shrink', tails)
        else:
            energies = [row[2] for row in rows]
            if any(b <= a for a, b in zip(energies, energies[1:])):
                raise AcceptanceFailure(
                    'Energy partial sums do not increase', energies
                )
        return {'threshold': threshold, 'rows': rows}

    async def maps(
            self, config: ExperimentConfig, chronicle: Chronicle,
            codomain_epsilon: float, function: str, p: float
    ) -> Dict[str, Any]:
        if function == 'snowflake':
            points = await self.runner.sweep(
                partial(_snowflake_point, config, codomain_epsilon),
                config.sweep_depths
            )
            await chronicle.log_table(
                'snowflake', ['depth', 'qs_statistic', 'L1', 'L2', 'Lambda',
                              'violations', 'alpha1', 'alpha2', 'a', 'b'],
                [(q['depth'], q['qs'], q['L1'], q['L2'], q['Lambda'],
                  q['violations'], q['alpha1'], q['alpha2'], q['a'], q['b'])
                 for q in points]
            )
            for q in points:
                if q['violations'] or not q['qs_passed']:
                    raise AcceptanceFailure(
                        f'Snowflake round trip fails at depth {q["depth"]}', q
                    )
                for key in ('alpha1', 'alpha2'):
                    if relative_difference(q[key], q['sigma']) \
                            > EXPONENT_TOLERANCE:
                        raise AcceptanceFailure(
                            f'Fitted {key} {q[key]:.6g} differs from '
                            f'{q["sigma"]:.6g}', q
                        )
            return {'points': points}
        if function == 'example':
            points = await self.runner.sweep(
                partial(_example_point, config, codomain_epsilon, p),
                config.sweep_depths
            )
            await chronicle.log_table(
                'example', ['depth', 'qs_statistic', 'L1', 'L2', 'Lambda',
                            'envelope_violations', 'morse_deviation', 'tau',
                            'order_reversals', 'pushforward_ratio',
                            'energy_ratio'],
                [(q['depth'], q['qs'], q['L1'], q['L2'], q['Lambda'],
                  q['envelope_violations'], q['morse'], q['tau'],
                  q['reversals'], q['pushforward'], q['energy'])
                 for q in points]
            )
            for q in points:
                if q['envelope_violations'] or q['qs'] > 1 + 1e-9 \
                        or q['morse'] > q['tau']:
                    raise AcceptanceFailure(
                        f'Example map fails at depth {q["depth"]}', q
                    )
            _require_drift([q['pushforward'] for q in points],
                           PUSHFORWARD_DRIFT, 'pushforward ratio')
            return {'points': points}
        raise ValidationError(
            f'Map families are "snowflake" and "example", got {function}'
        )

    async def rigidity(
            self, config: ExperimentConfig, chronicle: Chronicle
    ) -> Dict[str, Any]:
        depth = config.depth
        cases = [
            ('identity', VertexMap.identity(config.tree()), 1, ISOMETRY),
            ('rerooted', rerooted_isometry(depth), 2, ISOMETRY),
            ('section', example_binary_ternary(min(depth, 4))[1], 1,
             'not-geodesic'),
        ]
        rows = []
        for name, G, margin, expected in cases:
            report = await self.runner.sweep(
                partial(rigidity_check, margin=margin), [G]
            )
            report = report[0]
            rows.append((name, report.verdict, expected,
                         ' '.join(report.witness or ())))
        await chronicle.log_table(
            'rigidity', ['map', 'verdict', 'expected', 'witness'], rows
        )
        for name, verdict, expected, witness in rows:
            if verdict != expected:
                raise AcceptanceFailure(
                    f'Rigidity verdict for {name} is {verdict}, expected '
                    f'{expected}', witness
                )
        return {'rows': rows}


def _require_drift(values: List[float], tolerance: float, what: str) -> None:
    if len(values) >= 2 \
            and relative_difference(values[0], values[-1]) > tolerance:
        raise AcceptanceFailure(
            f'{what} drifts by more than {tolerance:.0%} across depths',
            values
        )


def _measure_point(config: ExperimentConfig, samples: int, depth: int) \
        -> Dict[str, Any]:
    tree = config.tree(depth)
    weights = config.weights()
    weighted = WeightedTree(tree, weights)
    grid = ball_sample_grid(tree, weights, config.seed, samples)
    doubling = max(weighted.doubling_ratio(x, r) for x, r in grid)
    ratios = [weighted.ball_measure(x, r).ratio for x, r in grid]
    s_prime = weights.dimension_exponent - DIMENSION_SHIFT
    dimension = weighted.dimension_condition_check(
        nested_ball_samples(tree, weights, config.seed), s_prime
    )
    point = {
        'depth': depth,
        'doubling': doubling,
        'min_ratio': min(ratios),
        'max_ratio': max(ratios),
        's': dimension.s,
        'statistic': dimension.statistic,
        's_prime': s_prime,
        'statistic_prime': dimension.statistic_prime,
        'dimension': math.nan,
        'ahlfors_min': math.nan,
        'ahlfors_max': math.nan,
        'spread': 1.0,
        'triples': 0,
        'violations': 0,
        'violation_witness': None,
    }
    if not tree.regular:
        return point
    space = BoundarySpace(tree, weights.epsilon)
    rng = np.random.default_rng(config.seed)
    centers = range(space.size) if space.size <= AHLFORS_CENTERS \
        else rng.integers(0, space.size, AHLFORS_CENTERS)
    radii = space.radius_grid(min(10, depth))
    ahlfors = space.ahlfors_regularity_report(
        (int(c), r) for c in centers for r in radii
    )
    point.update(
        dimension=ahlfors.dimension, ahlfors_min=ahlfors.minimum,
        ahlfors_max=ahlfors.maximum, spread=ahlfors.spread,
    )
    triple_set = triples(space, config.seed)
    for zeta, xi, chi in triple_set.chunks():
        left = space.split_levels(zeta, chi)
        right = np.minimum(space.split_levels(zeta, xi),
                           space.split_levels(xi, chi))
        broken = left < right
        point['triples'] += len(zeta)
        point['violations'] += int(np.sum(broken))
        if broken.any() and point['violation_witness'] is None:
            at = int(np.argmax(broken))
            point['violation_witness'] = [
                int(zeta[at]), int(xi[at]), int(chi[at])
            ]
    return point


def _poincare_point(
        config: ExperimentConfig, p: float, samples: int, balls: int,
        depth: int
) -> Dict[str, Any]:
    tree = config.tree(depth)
    weights = config.weights()
    weighted = WeightedTree(tree, weights)
    grid = ball_sample_grid(tree, weights, config.seed, balls)
    rng = np.random.default_rng(config.seed)
    chosen = [grid[i] for i in rng.choice(len(grid), balls, replace=False)]
    constants = []
    for i in range(samples):
        u = TreeFunction.random(tree, config.seed + i)
        g = minimal_upper_gradient(u, weights)
        for x, r in chosen:
            constants.append(weighted.poincare_check(u, g, x, r, p).constant)
    return {
        'depth': depth,
        'max_constant': max(constants),
        'mean_constant': float(np.mean(constants)),
        'checks': len(constants),
    }


def _trace_point(config: ExperimentConfig, params, samples: int,
                 depth: int) -> Dict[str, Any]:
    tree = config.tree(depth)
    weights = config.weights()
    space = BoundarySpace(tree, weights.epsilon)
    extension, tracing = None, None
    for i in range(samples):
        f = BoundaryFunction.random(space, config.seed + i)
        u, _ = extend(f, weights)
        if not np.array_equal(trace(u, weights).values, f.values):
            raise AcceptanceFailure(
                f'Tr(Ext f) differs from f at depth {depth}', config.seed + i
            )
        if params.extension_admissible:
            value = extension_norm_ratio(f, weights, params).value
            extension = value if extension is None else max(extension, value)
        if params.trace_admissible:
            value = trace_norm_ratio(
                TreeFunction.random(tree, config.seed + i), weights, params
            ).value
            tracing = value if tracing is None else max(tracing, value)
    return {'depth': depth, 'extension': extension, 'trace': tracing}


def _snowflake_point(config: ExperimentConfig, codomain_epsilon: float,
                     depth: int) -> Dict[str, Any]:
    domain = BoundarySpace(config.tree(depth), config.epsilon)
    codomain = domain.with_epsilon(codomain_epsilon)
    f = snowflake_map(domain, codomain)
    triple_set = triples(domain, config.seed)
    qs = qs_check(f, f.eta, triple_set)
    F = extend_qs_to_tree(f)
    rqi = rqi_check(F, config.seed)
    g = boundary_map_from_rqi(F, rqi)
    fitted = fit_eta(g, triple_set)
    holder = bi_holder_check(g, rqi, config.seed)
    return {
        'depth': depth,
        'sigma': f.eta.alpha1,
        'qs': qs.statistic,
        'qs_passed': qs.passed,
        'L1': rqi.L1,
        'L2': rqi.L2,
        'Lambda': rqi.Lambda,
        'violations': rqi.violations,
        'density_radius': rqi.density_radius,
        'alpha1': fitted.alpha1,
        'alpha2': fitted.alpha2,
        'A': fitted.A,
        'a': holder.a,
        'b': holder.b,
    }


def _example_point(config: ExperimentConfig, codomain_epsilon: float,
                   p: float, depth: int) -> Dict[str, Any]:
    G, _ = example_binary_ternary(depth)
    rqi = rqi_check(G, config.seed)
    domain_level, domain_index, image_level, image_index = G.flat()
    i, j = cell_pairs(len(domain_level), config.seed)
    d = comb_distances(domain_level[i], domain_index[i], domain_level[j],
                       domain_index[j], 2)
    D = comb_distances(image_level[i], image_index[i], image_level[j],
                       image_index[j], 3)
    envelope = int(np.sum((D < 0.5 * d - 2) | (D > d)))

    epsilons = (config.epsilon, codomain_epsilon)
    f = boundary_map_from_rqi(G, rqi, epsilons)
    stated = RqiReport(0.5, 1.0, rqi.Lambda, rqi.density_radius, rqi.pairs,
                       rqi.exhaustive)
    eta = eta_from_rqi(f, stated, triples(f.domain, config.seed))
    qs = qs_check(f, eta, triples(f.domain, config.seed + 1))
    holder = bi_holder_check(f, rqi, config.seed)
    constants = MapConstants.build(rqi, holder, f.domain)
    morse = max(
        morse_tracking_check(G, f, cell, constants).deviation
        for cell in list(f.domain.cells())[:256]
    )
    order = order_check(f, constants, triples(f.domain, config.seed))

    q_x = f.domain.hausdorff_dimension()
    q_y = f.codomain.hausdorff_dimension()
    u = BoundaryFunction.random(
        f.codomain, config.seed, min(4, f.codomain.depth)
    )
    pushforward = besov_pushforward(u, f, p, q_x / p, q_y / p, eta,
                                    config.seed)
    return {
        'depth': depth,
        'qs': qs.statistic,
        'alpha1': eta.alpha1,
        'alpha2': eta.alpha2,
        'A': eta.A,
        'L1': rqi.L1,
        'L2': rqi.L2,
        'Lambda': rqi.Lambda,
        'envelope_violations': envelope,
        'morse': morse,
        'tau': constants.tau,
        'reversals': order.reversals,
        'order_evaluated': order.evaluated,
        'pushforward': pushforward.ratio,
        'energy': pushforward.energy_ratio,
    }
