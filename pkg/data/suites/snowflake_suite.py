import math
from typing import TYPE_CHECKING, Any, Dict

from cantortree.boundary import BoundarySpace
from cantortree.chronicle import Chronicle
from cantortree.data.experiment import ExperimentConfig
from cantortree.errors import AcceptanceFailure
from cantortree.maps import bi_holder_check, snowflake_besov_exponent, \
    snowflake_holder_constant, snowflake_map
from cantortree.spaces import BesovParams, BoundaryFunction, besov_report
from cantortree.suite import Suite, SuiteParam
from cantortree.utils import relative_difference

if TYPE_CHECKING:
    from cantortree.runner import ExperimentRunner

SNOWFLAKE_EXP = 'snowflake'
TOLERANCE = 1e-9


class SnowflakeSuite(Suite):
    """Besov exponents under the snowflake d -> d^sigma."""

    def __init__(self, runner: 'ExperimentRunner'):
        super().__init__(runner)

        self.register_experiment(
            name=SNOWFLAKE_EXP,
            handler=self.snowflake,
            help_msg='Seminorms of one function before and after '
                     'snowflaking the boundary metric.',
            params=[
                SuiteParam('codomain_epsilon', converter=float),
                SuiteParam('theta', converter=float),
                SuiteParam('p', optional=True, default=2.0, converter=float),
                SuiteParam('samples', optional=True, default=10),
            ],
            sampled=True,
        )

    async def snowflake(
            self, config: ExperimentConfig, chronicle: Chronicle,
            codomain_epsilon: float, theta: float, p: float, samples: int
    ) -> Dict[str, Any]:
        domain = BoundarySpace(config.tree(), config.epsilon)
        codomain = domain.with_epsilon(codomain_epsilon)
        f = snowflake_map(domain, codomain)
        sigma = f.eta.alpha1
        theta_prime, q_prime = snowflake_besov_exponent(
            theta, sigma, domain.hausdorff_dimension()
        )
        holder = bi_holder_check(f, seed=config.seed)
        # Level structure is shared, only the scales change
        expected = (2 / codomain.epsilon) ** theta_prime \
            / (2 / domain.epsilon) ** theta

        rows = []
        for i in range(samples):
            u = BoundaryFunction.random(domain, config.seed + i)
            snowflaked = BoundaryFunction(codomain, u.values, u.resolution)
            before = besov_report(u, BesovParams(p, theta)).value
            after = besov_report(
                snowflaked, BesovParams(p, theta_prime)
            ).value
            rows.append((config.seed + i, before, after, before / after))
        await chronicle.log_table(
            'snowflake', ['seed', 'seminorm', 'snowflaked_seminorm', 'ratio'],
            rows
        )

        results = {
            'sigma': sigma,
            'theta_prime': theta_prime,
            'q_prime': q_prime,
            'codomain_dimension': codomain.hausdorff_dimension(),
            'holder_exponents': [holder.a, holder.b],
            'holder_constant': snowflake_holder_constant(domain, codomain),
            'expected_ratio': expected,
        }
        if relative_difference(q_prime, codomain.hausdorff_dimension()) \
                > TOLERANCE:
            raise AcceptanceFailure('Snowflaked dimension is not Q/sigma',
                                    results)
        for seed, _, _, ratio in rows:
            if not math.isclose(ratio, expected, rel_tol=1e-6):
                raise AcceptanceFailure(
                    f'Seminorm ratio {ratio:.6g} differs from {expected:.6g}',
                    seed
                )
        return results


SUITE = SnowflakeSuite
