import argparse
import asyncio
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import toml

from cantortree.errors import CantorTreeError, ValidationError
from cantortree.runner import EXIT_FAILURE, EXIT_VALIDATION, \
    ExperimentRunner

CONFIG_FILE_NAME = 'config.toml'
DEFAULT_CONFIG_FILE_NAME = 'config.default.toml'
EXPERIMENTS = ('measure', 'poincare', 'besov', 'trace', 'maps', 'rigidity')
COMPARE_CMD = 'compare'


def load_driver_config() -> Dict[str, Any]:
    path = CONFIG_FILE_NAME if os.path.isfile(CONFIG_FILE_NAME) \
        else DEFAULT_CONFIG_FILE_NAME
    with open(path) as f:
        return toml.load(f)['cantortree']


def build_parser(extra: List[str]) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='Geometric experiments on weighted trees and their '
                    'Cantor boundaries.'
    )
    commands = parser.add_subparsers(dest='command', required=True)
    for name in sorted(set(EXPERIMENTS) | set(extra)):
        command = commands.add_parser(name)
        command.add_argument('--config', default=None,
                             help='YAML file or named experiment id')
        command.add_argument('--out', default=None)
        command.add_argument('--seed', type=int, default=None)
        command.add_argument('--depth', type=int, default=None)
        command.add_argument('--threads', type=int, default=None)
    compare = commands.add_parser(COMPARE_CMD)
    compare.add_argument('run_a')
    compare.add_argument('run_b')
    compare.add_argument('--out', default=None)
    return parser


async def run_command(runner: ExperimentRunner,
                      args: argparse.Namespace) -> int:
    if args.command == COMPARE_CMD:
        try:
            diff = await runner.compare(args.run_a, args.run_b, args.out)
        except CantorTreeError as e:
            logging.error(str(e))
            return EXIT_VALIDATION if isinstance(e, ValidationError) \
                else EXIT_FAILURE
        logging.info(f'Largest relative difference: '
                     f'{diff["max_difference"]:.6g}')
        return 0
    try:
        config = runner.load_config(args.command, args.config) \
            .with_overrides(seed=args.seed, depth=args.depth, out=args.out)
    except ValidationError as e:
        logging.error(f'Validation error: {e}')
        return EXIT_VALIDATION
    return await runner.run(config)


def main(argv: Optional[List[str]] = None) -> int:
    # Configure logging
    driver_config = load_driver_config()
    logging.basicConfig(
        format='[%(asctime)s] %(levelname)s - %(message)s',
        level=getattr(logging, driver_config.get('log_level', 'INFO'))
    )

    try:
        runner = ExperimentRunner(
            driver_config['suites_dir'],
            driver_config['experiments_dir'],
            driver_config['out_dir'],
            driver_config.get('threads', 1),
        )
    except ValidationError as e:
        logging.error(f'Validation error: {e}')
        return EXIT_VALIDATION
    extra = [
        name for suite in runner.get_all_suites()
        for name in suite.experiments
    ]
    args = build_parser(extra).parse_args(argv)
    if getattr(args, 'threads', None) is not None:
        if args.threads < 1:
            logging.error(f'Validation error: need at least one thread, '
                          f'got {args.threads}')
            return EXIT_VALIDATION
        runner.threads = args.threads

    loop = asyncio.new_event_loop()
    asyncio.set_event_loop(loop)
    try:
        return loop.run_until_complete(run_command(runner, args))
    finally:
        loop.run_until_complete(loop.shutdown_asyncgens())
        loop.close()


if __name__ == '__main__':
    sys.exit(main())
