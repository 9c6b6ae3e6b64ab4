import logging
from abc import ABC, abstractmethod
from typing import Any, Callable, Dict, List, Optional, TYPE_CHECKING

from cantortree.chronicle import Chronicle
from cantortree.data.experiment import ExperimentConfig
from cantortree.errors import ValidationError

if TYPE_CHECKING:
    from cantortree.runner import ExperimentRunner


class Suite(ABC):

    @abstractmethod
    def __init__(self, runner: 'ExperimentRunner'):
        self.runner = runner
        self.experiments: Dict[str, SuiteExperiment] = {}

    def register_experiment(
            self,
            name: str,
            handler: Callable,
            help_msg: Optional[str] = None,
            params: Optional[List['SuiteParam']] = None,
            sampled: bool = False
    ):
        self.experiments[name] = SuiteExperiment(
            name=name,
            handler=handler,
            help_msg=help_msg,
            params=params,
            sampled=sampled,
        )

    async def run_experiment(
            self, config: ExperimentConfig, chronicle: Chronicle
    ) -> Dict[str, Any]:
        experiment = self.experiments[config.experiment]
        logging.info(f'Running experiment {config.experiment} ({config.id})')
        results = await experiment.run(config, chronicle)
        logging.info(
            f'Finished experiment {config.experiment} ({config.id})'
        )
        return results

    def get_help(self) -> str:
        return '\n'.join(
            str(self.experiments[e]) for e in sorted(self.experiments.keys())
        )


class SuiteExperiment:
    def __init__(
            self,
            name: str,
            handler: Callable,
            help_msg: Optional[str] = None,
            params: Optional[List['SuiteParam']] = None,
            sampled: bool = False
    ):
        self.name = name
        self.handler = handler
        self.help = help_msg
        self.params = params if params else []
        self.sampled = sampled

    def validate(self, config: ExperimentConfig) -> List[Any]:
        if self.sampled and config.seed is None:
            raise ValidationError(
                f'Experiment {self.name} samples and needs a seed'
            )
        return [
            param.process(getattr(config, param.name))
            for param in self.params
        ]

    async def run(
            self, config: ExperimentConfig, chronicle: Chronicle
    ) -> Dict[str, Any]:
        processed_params = self.validate(config)
        return await self.handler(config, chronicle, *processed_params)

    def __str__(self):
        return \
            f'{self.name} ' \
            + ''.join(
                f'[{p.name}] ' if p.optional else f'{p.name} '
                for p in self.params
            ) \
            + (f'- {self.help}' if self.help else '')


class SuiteParam:
    def __init__(
            self,
            name: str,
            optional: bool = False,
            default: Any = None,
            converter: Optional[Callable] = None
    ):
        self.name = name
        self.optional = optional
        self.default = default
        self.converter = converter

    def process(self, value) -> Any:
        if value is None:
            if self.optional:
                return self.default
            raise ValidationError(
                f'Missing value for parameter "{self.name}"'
            )
        try:
            return self.converter(value) if self.converter else value
        except (TypeError, ValueError):
            raise ValidationError(
                f'Invalid value for parameter "{self.name}": "{value}"'
            )
