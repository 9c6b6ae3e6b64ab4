import asyncio
import json
import math
import os
import textwrap

import pytest

from cantortree.chronicle import ERROR_FILE, SUMMARY_FILE
from cantortree.data.experiment import ExperimentConfig
from cantortree.errors import SchemaMismatchError, ValidationError
from cantortree.runner import DIFF_FILE, EXIT_FAILURE, EXIT_SUCCESS, \
    EXIT_UNEXPECTED, EXIT_VALIDATION, ExperimentRunner

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
EXPERIMENTS_DIR = os.path.join(ROOT, 'data', 'experiments')
SUITES_DIR = os.path.join(ROOT, 'data', 'suites')

STUB_SUITE = textwrap.dedent('''
    from cantortree.errors import AcceptanceFailure
    from cantortree.suite import Suite


    class StubSuite(Suite):
        def __init__(self, runner):
            super().__init__(runner)
            self.register_experiment('depth_echo', self.depth_echo)
            self.register_experiment('always_fails', self.always_fails)
            self.register_experiment('explodes', self.explodes)

        async def depth_echo(self, config, chronicle):
            await chronicle.log_table('echo', ['depth'], [(config.depth,)])
            return {'depth': config.depth, 'half': config.depth / 2}

        async def always_fails(self, config, chronicle):
            raise AcceptanceFailure('Always fails', [1, 2])

        async def explodes(self, config, chronicle):
            raise RuntimeError('boom')


    SUITE = StubSuite
''')


@pytest.fixture
def runner(tmp_path):
    return ExperimentRunner(SUITES_DIR, EXPERIMENTS_DIR, str(tmp_path / 'out'))


@pytest.fixture
def stub_runner(tmp_path):
    suites = tmp_path / 'suites'
    suites.mkdir()
    (suites / 'stub_suite.py').write_text(STUB_SUITE)
    return ExperimentRunner(str(suites), EXPERIMENTS_DIR,
                            str(tmp_path / 'out'))


def read_json(path):
    with open(path) as f:
        return json.load(f)


def test_parse_config_reads_log_scalars():
    config = ExperimentRunner.parse_config(
        '--- !experiment\nexperiment: trace\nepsilon: !log 3\nseed: 4\n'
    )
    assert config.experiment == 'trace'
    assert config.id == 'trace'
    assert config.epsilon == pytest.approx(math.log(3))
    assert config.seed == 4


@pytest.mark.parametrize('text', [
    '--- !experiment\nexperiment: trace\nfrobnicate: 1\n',
    '--- !experiment\nepsilon: 1.0\n',
    'experiment: [trace\n',
    '--- !experiment\nexperiment: trace\ndepth: 0\n',
    '- trace\n',
])
def test_parse_config_rejects_bad_configs(text):
    with pytest.raises(ValidationError):
        ExperimentRunner.parse_config(text)


def test_named_configs_load(runner):
    assert 'trace-log-bounded' in runner.experiments
    assert runner.experiments['poincare'].beta == pytest.approx(math.log(4))
    assert 'snowflake' in runner.suites['snowflake_suite'](runner).experiments


@pytest.mark.parametrize('name,epsilon,codomain_epsilon,depths', [
    ('maps', 2, 3, [6, 8, 10]),
    ('maps-coarse', 3, 2, [6, 8, 10]),
    ('maps-square', 2, 4, [6, 8, 10]),
    ('maps-example', 3, 2, [8, 10, 12]),
])
def test_map_configs(runner, name, epsilon, codomain_epsilon, depths):
    config = runner.experiments[name]
    assert config.experiment == 'maps'
    assert config.epsilon == pytest.approx(math.log(epsilon))
    assert config.codomain_epsilon == pytest.approx(
        math.log(codomain_epsilon)
    )
    assert config.depths == depths
    assert config.seed is not None
    exhaustive = runner.experiments['maps-example-exhaustive']
    assert exhaustive.depth == 6 and exhaustive.function == 'example'


def test_load_config_sources(runner, tmp_path):
    assert runner.load_config('rigidity').id == 'rigidity'
    assert runner.load_config('trace', 'trace-log-bounded').function == 'log'
    assert runner.load_config('measure', None).experiment == 'measure'
    path = tmp_path / 'config.yaml'
    path.write_text('--- !experiment\nexperiment: besov\ndepth: 5\n')
    assert runner.load_config('besov', str(path)).depth == 5
    with pytest.raises(ValidationError):
        runner.load_config('measure', 'trace-log-bounded')
    with pytest.raises(ValidationError):
        runner.load_config('measure', 'no-such-config')


def test_defaults_apply_without_a_named_config(tmp_path):
    empty = tmp_path / 'experiments'
    empty.mkdir()
    runner = ExperimentRunner(SUITES_DIR, str(empty), str(tmp_path))
    config = runner.load_config('rigidity')
    assert config.depth == 10
    assert config.epsilon == pytest.approx(math.log(2))


def test_find_experiment_suggests_a_name(runner):
    assert 'snowflake' in runner.find_experiment('snowflake').experiments
    with pytest.raises(ValidationError, match='did you mean "trace"'):
        runner.find_experiment('trcae')


def test_overrides():
    config = ExperimentConfig(experiment='trace', depths=[4, 6], seed=1)
    changed = config.with_overrides(seed=2, depth=5, out='elsewhere')
    assert changed.sweep_depths == [5]
    assert changed.seed == 2
    assert config.config_hash != changed.config_hash
    assert config.with_overrides(out='elsewhere').config_hash \
        == config.config_hash


def test_threads_must_be_positive(tmp_path):
    with pytest.raises(ValidationError):
        ExperimentRunner(SUITES_DIR, EXPERIMENTS_DIR, str(tmp_path), 0)


def test_successful_run_writes_a_summary(runner, tmp_path):
    out = tmp_path / 'rigidity'
    config = ExperimentConfig(experiment='rigidity', depth=4, out=str(out))
    assert asyncio.run(runner.run(config)) == EXIT_SUCCESS
    summary = read_json(out / SUMMARY_FILE)
    assert summary['experiment'] == 'rigidity'
    assert summary['config_hash'] == config.config_hash
    assert summary['tables'] == ['rigidity.csv']
    assert (out / 'rigidity.csv').exists()


def test_missing_parameter_exits_with_a_validation_error(runner, tmp_path):
    out = tmp_path / 'maps'
    config = ExperimentConfig(experiment='maps', depth=4, seed=0,
                              out=str(out))
    assert asyncio.run(runner.run(config)) == EXIT_VALIDATION
    assert read_json(out / ERROR_FILE)['exit_code'] == EXIT_VALIDATION


def test_sampled_experiment_needs_a_seed(runner, tmp_path):
    out = tmp_path / 'trace'
    config = ExperimentConfig(experiment='trace', depth=4, out=str(out))
    assert asyncio.run(runner.run(config)) == EXIT_VALIDATION


@pytest.mark.parametrize('experiment,code,error', [
    ('always_fails', EXIT_FAILURE, 'AcceptanceFailure'),
    ('explodes', EXIT_UNEXPECTED, 'RuntimeError'),
])
def test_failing_runs_write_an_error(stub_runner, tmp_path, experiment,
                                     code, error):
    out = tmp_path / experiment
    config = ExperimentConfig(experiment=experiment, out=str(out))
    assert asyncio.run(stub_runner.run(config)) == code
    report = read_json(out / ERROR_FILE)
    assert report['error'] == error
    assert report['exit_code'] == code
    if code == EXIT_FAILURE:
        assert report['witness'] == [1, 2]


def test_compare_runs(stub_runner, tmp_path):
    runs = []
    for name, depth in (('a', 4), ('b', 4), ('c', 8)):
        out = str(tmp_path / name)
        config = ExperimentConfig(experiment='depth_echo', depth=depth,
                                  out=out)
        assert asyncio.run(stub_runner.run(config)) == EXIT_SUCCESS
        runs.append(out)
    same = asyncio.run(stub_runner.compare(runs[0], runs[1], None))
    assert same['max_difference'] == 0.0
    assert os.path.isfile(os.path.join(runs[0], DIFF_FILE))
    diff = asyncio.run(stub_runner.compare(runs[0], runs[2],
                                            str(tmp_path / 'diff')))
    assert diff['differences']['depth'] == pytest.approx(0.5)
    assert diff['only_in_first'] == []
    assert os.path.isfile(tmp_path / 'diff' / DIFF_FILE)


def test_compare_rejects_mismatched_runs(stub_runner, tmp_path):
    echo, rigid = str(tmp_path / 'echo'), str(tmp_path / 'rigid')
    asyncio.run(stub_runner.run(
        ExperimentConfig(experiment='depth_echo', out=echo)
    ))
    asyncio.run(stub_runner.run(
        ExperimentConfig(experiment='rigidity', depth=3, out=rigid)
    ))
    with pytest.raises(SchemaMismatchError):
        asyncio.run(stub_runner.compare(echo, rigid, None))
    with pytest.raises(SchemaMismatchError):
        asyncio.run(stub_runner.compare(echo, str(tmp_path / 'missing'),
                                         None))
