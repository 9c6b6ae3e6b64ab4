import asyncio
import importlib.util
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from glob import glob
from typing import Any, Callable, Dict, Iterable, List, Optional, Type

import yaml

from cantortree.base_suite import BaseSuite
from cantortree.chronicle import Chronicle, SUMMARY_FILE
from cantortree.data.base import load_log
from cantortree.data.experiment import ExperimentConfig
from cantortree.errors import AcceptanceFailure, CantorTreeError, \
    ConditionFailure, ParameterViolation, SchemaMismatchError, \
    ValidationError
from cantortree.suite import Suite
from cantortree.utils import fuzzy_search, relative_difference

DIFF_FILE = 'diff.json'

EXIT_SUCCESS = 0
EXIT_UNEXPECTED = 1
EXIT_VALIDATION = 2
EXIT_FAILURE = 3


class ExperimentRunner:
    def __init__(
            self,
            suites_dir: str,
            experiments_dir: str,
            out_dir: str,
            threads: int = 1
    ):
        if threads < 1:
            raise ValidationError(f'Need at least one thread, got {threads}')
        self.suites_dir = suites_dir
        self.experiments_dir = experiments_dir
        self.out_dir = out_dir
        self.threads = threads
        self.suites: Dict[str, Type[Suite]] = {}
        self.experiments: Dict[str, ExperimentConfig] = {}
        self.reload()

    def reload(self) -> None:
        self.suites = self.load_suites(self.suites_dir)
        self.experiments = self.load_experiments(self.experiments_dir)
        logging.info(
            f'Loaded {len(self.suites)} extra suite(s) and '
            f'{len(self.experiments)} named experiment(s)'
        )

    def get_all_suites(self) -> List[Suite]:
        return [BaseSuite(self)] + [
            suite(self) for _, suite in sorted(self.suites.items())
        ]

    def find_experiment(self, name: str) -> Suite:
        suites = self.get_all_suites()
        for suite in suites:
            if name in suite.experiments:
                return suite
        known = [e for suite in suites for e in suite.experiments]
        suggestion = fuzzy_search(name, known)
        raise ValidationError(
            f'Unknown experiment "{name}"'
            + (f', did you mean "{suggestion}"?' if suggestion else '')
        )

    def get_help(self) -> str:
        return '\n'.join(suite.get_help() for suite in self.get_all_suites())

    def load_config(
            self, experiment: str, source: Optional[str] = None
    ) -> ExperimentConfig:
        """A config from a YAML file, a named config id, or the defaults."""
        if source is None:
            config = self.experiments.get(experiment) \
                or ExperimentConfig(experiment=experiment)
        elif os.path.isfile(source):
            with open(source) as f:
                config = self.parse_config(f.read())
        elif source in self.experiments:
            config = self.experiments[source]
        else:
            suggestion = fuzzy_search(source, self.experiments)
            raise ValidationError(
                f'No config file or named experiment "{source}"'
                + (f', did you mean "{suggestion}"?' if suggestion else '')
            )
        if config.experiment != experiment:
            raise ValidationError(
                f'Config {config.id} is for "{config.experiment}", not '
                f'"{experiment}"'
            )
        return config

    @staticmethod
    def parse_config(text: str) -> ExperimentConfig:
        _register_constructors()
        try:
            data = yaml.load(text, Loader=yaml.Loader)
        except yaml.YAMLError as e:
            raise ValidationError(f'Invalid experiment config: {e}')
        except TypeError as e:
            raise ValidationError(f'Invalid experiment config: {e}')
        if isinstance(data, ExperimentConfig):
            return data
        return ExperimentConfig.from_dict(data)

    async def sweep(self, fn: Callable[[Any], Any], points: Iterable[Any]) \
            -> List[Any]:
        loop = asyncio.get_event_loop()
        with ThreadPoolExecutor(max_workers=self.threads) as executor:
            return list(await asyncio.gather(*(
                loop.run_in_executor(executor, fn, point)
                for point in points
            )))

    async def run(self, config: ExperimentConfig) -> int:
        out_dir = config.out or os.path.join(self.out_dir, config.id)
        chronicle = Chronicle(out_dir, config.config_hash)
        try:
            suite = self.find_experiment(config.experiment)
            results = await suite.run_experiment(config, chronicle)
            await chronicle.log_summary(
                config.experiment, config.to_dict(), results
            )
            return EXIT_SUCCESS
        except ValidationError as e:
            logging.error(f'Validation error: {e}')
            await chronicle.log_error(
                type(e).__name__, str(e), EXIT_VALIDATION,
                e.interval if isinstance(e, ParameterViolation) else None
            )
            return EXIT_VALIDATION
        except CantorTreeError as e:
            if isinstance(e, AcceptanceFailure):
                logging.error(f'Acceptance property violated: {e}')
            else:
                logging.error(f'{type(e).__name__}: {e}')
            await chronicle.log_error(
                type(e).__name__, str(e), EXIT_FAILURE,
                e.witness if isinstance(e, ConditionFailure) else None
            )
            return EXIT_FAILURE
        except Exception as e:
            logging.exception(
                f'Encountered unexpected error in experiment {config.id}'
            )
            await chronicle.log_error(
                type(e).__name__, str(e), EXIT_UNEXPECTED
            )
            return EXIT_UNEXPECTED

    async def compare(self, run_a: str, run_b: str, out: Optional[str]) \
            -> Dict[str, Any]:
        summary_a, summary_b = _read_summary(run_a), _read_summary(run_b)
        if summary_a['experiment'] != summary_b['experiment']:
            raise SchemaMismatchError(
                f'Cannot compare a {summary_a["experiment"]} run with a '
                f'{summary_b["experiment"]} run'
            )
        fields_a = dict(_numeric_fields(summary_a['results']))
        fields_b = dict(_numeric_fields(summary_b['results']))
        shared = sorted(set(fields_a) & set(fields_b))
        if not shared:
            raise SchemaMismatchError('The runs share no numeric fields')
        diff = {
            'experiment': summary_a['experiment'],
            'runs': [run_a, run_b],
            'config_hashes': [
                summary_a['config_hash'], summary_b['config_hash']
            ],
            'differences': {
                key: relative_difference(fields_a[key], fields_b[key])
                for key in shared
            },
            'only_in_first': sorted(set(fields_a) - set(fields_b)),
            'only_in_second': sorted(set(fields_b) - set(fields_a)),
        }
        diff['max_difference'] = max(diff['differences'].values())
        chronicle = Chronicle(out or run_a, summary_a['config_hash'])
        await chronicle.log_json(DIFF_FILE, diff)
        return diff

    @staticmethod
    def load_suites(suites_dir: str) -> Dict[str, Type[Suite]]:
        suites = {}
        for suite_file in glob(os.path.join(suites_dir, '*.py')):
            suite_name = os.path.splitext(os.path.basename(suite_file))[0]
            suite_spec = importlib.util.spec_from_file_location(
                suite_name, suite_file
            )
            suite = importlib.util.module_from_spec(suite_spec)
            # noinspection PyUnresolvedReferences
            suite_spec.loader.exec_module(suite)
            # noinspection PyUnresolvedReferences
            suites[suite_name] = suite.SUITE
        return suites

    @staticmethod
    def load_experiments(experiments_dir: str) \
            -> Dict[str, ExperimentConfig]:
        experiments = {}
        for experiment_file in sorted(
                glob(os.path.join(experiments_dir, '*.yaml'))
        ):
            with open(experiment_file) as f:
                config = ExperimentRunner.parse_config(f.read())
                experiments[config.id] = config
        return experiments


def _register_constructors() -> None:
    yaml.add_constructor('!experiment', ExperimentConfig.load)
    yaml.add_constructor('!log', load_log)


def _read_summary(run_dir: str) -> Dict[str, Any]:
    path = os.path.join(run_dir, SUMMARY_FILE)
    try:
        with open(path) as f:
            summary = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise SchemaMismatchError(f'Cannot read {path}: {e}')
    if not isinstance(summary, dict) \
            or not {'experiment', 'config_hash', 'results'} <= set(summary):
        raise SchemaMismatchError(f'{path} is not a run summary')
    return summary


def _numeric_fields(value: Any, prefix: str = ''):
    if isinstance(value, dict):
        for key in sorted(value):
            yield from _numeric_fields(
                value[key], f'{prefix}.{key}' if prefix else str(key)
            )
    elif isinstance(value, list):
        for i, item in enumerate(value):
            yield from _numeric_fields(item, f'{prefix}[{i}]')
    elif isinstance(value, (int, float)) and not isinstance(value, bool):
        yield prefix, float(value)
