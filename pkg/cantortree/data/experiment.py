import math
from typing import Any, Dict, List, Optional, Union

from cantortree.data.base import YAMLObjectWithDefaults
from cantortree.errors import ValidationError
from cantortree.measure import MetricWeights
from cantortree.tree import HashedBranching, TreeSpec
from cantortree.utils import hash_config

FIELDS = (
    'id', 'experiment', 'branching', 'depth', 'epsilon', 'beta', 'p',
    'theta', 'alpha', 'gamma', 'seed', 'samples', 'balls', 'depths',
    'function', 'codomain_epsilon', 'out',
)


class ExperimentConfig(YAMLObjectWithDefaults):
    def __init__(
            self,
            experiment: str,
            id: Optional[str] = None,
            branching: Union[int, List[int]] = 2,
            depth: int = 10,
            epsilon: float = math.log(2),
            beta: Optional[float] = None,
            p: Optional[float] = None,
            theta: Optional[float] = None,
            alpha: Optional[float] = None,
            gamma: Optional[float] = None,
            seed: Optional[int] = None,
            samples: Optional[int] = None,
            balls: Optional[int] = None,
            depths: Optional[List[int]] = None,
            function: Optional[str] = None,
            codomain_epsilon: Optional[float] = None,
            out: Optional[str] = None
    ):
        self.id = id if id is not None else experiment
        self.experiment = experiment
        self.branching = branching
        self.depth = depth
        self.epsilon = epsilon
        self.beta = beta
        self.p = p
        self.theta = theta
        self.alpha = alpha
        self.gamma = gamma
        self.seed = seed
        self.samples = samples
        self.balls = balls
        self.depths = depths
        self.function = function
        self.codomain_epsilon = codomain_epsilon
        self.out = out
        self.validate()

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        if not isinstance(data, dict):
            raise ValidationError('An experiment config must be a mapping')
        unknown = set(data) - set(FIELDS)
        if unknown:
            raise ValidationError(
                f'Unknown config keys: {", ".join(sorted(unknown))}'
            )
        if 'experiment' not in data:
            raise ValidationError('An experiment config needs "experiment"')
        return cls(**data)

    def validate(self) -> None:
        if not isinstance(self.experiment, str) or not self.experiment:
            raise ValidationError('Experiment name must be a string')
        if isinstance(self.branching, list):
            if len(self.branching) != 2 \
                    or not 2 <= self.branching[0] <= self.branching[1]:
                raise ValidationError(
                    f'Branching range must be [min, max] with min >= 2, got '
                    f'{self.branching}'
                )
        elif not isinstance(self.branching, int) or self.branching < 2:
            raise ValidationError(
                f'Branching must be an integer >= 2, got {self.branching}'
            )
        _check_int('depth', self.depth, 1)
        _check_positive('epsilon', self.epsilon)
        if self.beta is not None and not self.beta >= 0:
            raise ValidationError(f'beta must be >= 0, got {self.beta}')
        if self.p is not None and not self.p >= 1:
            raise ValidationError(f'p must be >= 1, got {self.p}')
        for name in ('theta', 'codomain_epsilon'):
            if getattr(self, name) is not None:
                _check_positive(name, getattr(self, name))
        if self.seed is not None:
            _check_int('seed', self.seed, 0)
        for name in ('samples', 'balls'):
            if getattr(self, name) is not None:
                _check_int(name, getattr(self, name), 1)
        if self.depths is not None:
            if not isinstance(self.depths, list) or not self.depths:
                raise ValidationError('depths must be a non-empty list')
            for depth in self.depths:
                _check_int('depths entry', depth, 1)

    def with_overrides(
            self,
            seed: Optional[int] = None,
            depth: Optional[int] = None,
            out: Optional[str] = None
    ) -> 'ExperimentConfig':
        data = self.to_dict()
        if seed is not None:
            data['seed'] = seed
        if depth is not None:
            data['depth'] = depth
            data['depths'] = None
        if out is not None:
            data['out'] = out
        return ExperimentConfig(**data)

    def to_dict(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in FIELDS}

    @property
    def config_hash(self) -> str:
        data = self.to_dict()
        data.pop('out')
        return hash_config(data)

    @property
    def sweep_depths(self) -> List[int]:
        return self.depths if self.depths is not None else [self.depth]

    def tree(self, depth: Optional[int] = None) -> TreeSpec:
        depth = self.depth if depth is None else depth
        if isinstance(self.branching, list):
            return TreeSpec(depth, rule=HashedBranching(
                self.branching[0], self.branching[1], self.seed or 0
            ))
        return TreeSpec(depth, self.branching)

    def weights(self) -> MetricWeights:
        beta = self.beta if self.beta is not None else self.epsilon
        return MetricWeights(self.epsilon, beta)


def _check_int(name: str, value: Any, low: int) -> None:
    if isinstance(value, bool) or not isinstance(value, int) or value < low:
        raise ValidationError(f'{name} must be an integer >= {low}, got '
                              f'{value!r}')


def _check_positive(name: str, value: Any) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, float)) \
            or not value > 0:
        raise ValidationError(f'{name} must be positive, got {value!r}')
