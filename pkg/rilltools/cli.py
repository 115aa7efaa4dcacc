"""Command line interface of rilltools, installed as the ``rill`` command.

Every subcommand reads an optional experiment config file, writes its CSV
tables (and RunRecords for training runs) under ``--out`` and prints a
summary table unless ``--quiet`` is given.
"""
import dataclasses
import functools
import os
from collections import OrderedDict
from typing import Any, Dict, List, Optional, Sequence

try:
    import click
    from tabulate import tabulate, tabulate_formats
except ImportError:
    raise ImportError('The rill command requires the cli extras: pip install rilltools[cli]')

from rilltools import utils
from rilltools.config import ExperimentConfig, load_config
from rilltools.errors import RillError
from rilltools.experiments import (CASE_STUDY_CONFIG, CASE_STUDY_EPSILON, PROXY_CONFIG,
                                   bias_scatter, make_task, replay_record, run_case_study,
                                   run_clark_comparison,
                                   run_completeness_sweep, run_epsilon_sweep,
                                   run_labelled_data_sweep, run_lambda_sweep,
                                   run_operator_sweep, write_csv)
from rilltools.datasets import FourClusterSpec
from rilltools.fuzzy import (Lukasiewicz, Reichenbach, Sigmoidal, check_confidence_monotonic,
                             check_implication_biased, make_operator, operator_scan,
                             write_operator_scan)
from rilltools.loggers import set_verbose
from rilltools.losses import NegLogBase2, make_transform

#: Threshold of the thresholded methods when the config leaves it unset
DEFAULT_EPSILON = 0.1


class CommandError(click.ClickException):
    """Reports a :class:`RillError` as ``error: <ErrorClassName>: <message>``."""
    exit_code = 1

    def __init__(self, error: RillError):
        super().__init__(str(error))
        self.error = error

    def format_message(self) -> str:
        return '{0}: {1}'.format(type(self.error).__name__, self.message)

    def show(self, file=None):
        click.echo('error: {0}'.format(self.format_message()), file=file, err=True)


def _reports_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except RillError as exc:
            raise CommandError(exc) from exc
    return wrapper


def _experiment_options(func):
    func = click.option('-c', '--config', 'config_path', type=click.Path(exists=True, dir_okay=False),
                        default=None, help='Experiment config file (INI). Defaults apply to '
                                           'every missing key, and to everything without it.')(func)
    func = click.option('--seed', type=int, default=None,
                        help='Training seed; a sweep then runs this single seed.')(func)
    func = click.option('--out', type=click.Path(file_okay=False), default='results',
                        show_default=True, help='Directory of the CSV and record files.')(func)
    return func


def _load(config_path: Optional[str], seed: Optional[int], default_train) -> ExperimentConfig:
    if config_path is None:
        config = ExperimentConfig(train=default_train)
        if seed is not None:
            config = dataclasses.replace(config, train=config.train.replace(seed=seed))
        return config
    return load_config(config_path, seed)


def _seeds(config: ExperimentConfig, seed: Optional[int]) -> Sequence[int]:
    return (seed,) if seed is not None else config.sweep.seeds


def _epsilon(config: ExperimentConfig, default: float = DEFAULT_EPSILON) -> float:
    return config.train.logic.epsilon if config.train.logic.epsilon is not None else default


def _out_dir(out: str, *parts: str) -> str:
    path = os.path.join(out, *parts)
    os.makedirs(path, exist_ok=True)
    return path


def _sweep_options(config: ExperimentConfig, out: str) -> Dict[str, Any]:
    return {'workers': config.sweep.workers, 'data_spec': config.data,
            'data_seed': config.data_seed, 'record_dir': _out_dir(out, 'records')}


def _report(ctx: click.Context, rows: List[Dict[str, Any]], path: str, title: str) -> None:
    write_csv(path, rows)
    if ctx.obj['quiet']:
        return
    click.echo(tabulate([list(r.values()) for r in rows],
                        headers=list(rows[0].keys()) if rows else (),
                        tablefmt=ctx.obj['output'], floatfmt='.4f'))
    click.echo('{0}; {1:d} rows written to {2}'.format(title, len(rows), path))


@click.group(context_settings={'help_option_names': ['-h', '--help']})
@click.option('-v', '--verbose', is_flag=True, help='Log run and sweep progress.')
@click.option('-q', '--quiet', is_flag=True, help='Do not print summary tables.')
@click.option('-o', '--output', type=click.Choice(tabulate_formats), default='simple',
              help='This option is passed directly to python-tabulate package as the '
                   '"tablefmt" parameter. Defaults to "simple".')
@click.pass_context
def invoke_rilltools(ctx, verbose, quiet, output):
    """Command line interface to the rilltools package."""
    set_verbose(verbose)
    ctx.obj = {'quiet': quiet, 'output': output}


@invoke_rilltools.command('bias-scan')
@_experiment_options
@click.option('-n', '--samples', type=click.IntRange(0), default=1000, show_default=True,
              help='Number of sampled (G(p), G(q)) pairs.')
@click.option('--transform', type=click.Choice(['identity', 'l2', 'hinge', 'l2hinge']),
              default='identity', show_default=True)
@click.pass_context
@_reports_errors
def bias_scan(ctx, config_path, seed, out, samples, transform):
    """Loss and premise gradient of p -> q at random confidences."""
    config = _load(config_path, seed, PROXY_CONFIG)
    logic_ = config.train.logic
    op = make_operator(logic_.operator, logic_.s, logic_.b0)
    t = make_transform(transform, _epsilon(config) if transform in ('hinge', 'l2hinge') else None)
    rows = bias_scatter(op, NegLogBase2(), t, samples, config.train.seed)
    path = os.path.join(_out_dir(out), 'bias_scan_{0}_{1}.csv'.format(logic_.operator, t.name))
    write_csv(path, rows, ('premise', 'consequent', 'loss', 'grad_norm'))

    report = check_implication_biased(op)
    summary = OrderedDict([
        ('operator', repr(op)), ('transform', repr(t)), ('samples', len(rows)),
        ('max_strict_delta', report.max_strict_delta),
        ('biased_fraction', report.biased_fraction[1.0]),
        ('gated_with_gradient', sum(1 for r in rows
                                    if t.epsilon is not None and r.loss <= t.epsilon
                                    and r.grad_norm > 0)),
    ])
    if not ctx.obj['quiet']:
        click.echo(tabulate(summary.items(), tablefmt=ctx.obj['output'], floatfmt='.4f'))
        click.echo('{0:d} rows written to {1}'.format(len(rows), path))


@invoke_rilltools.command('operator-scan')
@_experiment_options
@click.option('--grid', type=click.IntRange(10), default=21, show_default=True,
              help='Lattice points per axis of the written scans.')
@click.pass_context
@_reports_errors
def operator_scan_command(ctx, config_path, seed, out, grid):
    """Values, partials and bias checks of every implication operator."""
    config = _load(config_path, seed, PROXY_CONFIG)
    operators = [Reichenbach(), Lukasiewicz()] + [
        Sigmoidal(s, config.train.logic.b0) for s in config.sweep.steepness]
    directory = _out_dir(out, 'operator_scan')
    rows = []
    for op in operators:
        name = op.name if not isinstance(op, Sigmoidal) else 'sigmoidal_s{0:g}'.format(op.s)
        write_operator_scan(os.path.join(directory, '{0}.csv'.format(name)),
                            operator_scan(op, grid))
        biased = check_implication_biased(op)
        rows.append(OrderedDict([
            ('operator', name),
            ('confidence_monotonic', check_confidence_monotonic(op).strict),
            ('max_strict_delta', biased.max_strict_delta),
            ('biased_fraction', biased.biased_fraction[1.0]),
        ]))
    _report(ctx, rows, os.path.join(_out_dir(out), 'operator_scan.csv'), 'Operator scan')


@invoke_rilltools.command('case-study')
@_experiment_options
@click.pass_context
@_reports_errors
def case_study(ctx, config_path, seed, out):
    """Blue -> Circle and Circle -> Blue on the four-cluster task."""
    config = _load(config_path, seed, CASE_STUDY_CONFIG)
    spec = config.data if isinstance(config.data, FourClusterSpec) else FourClusterSpec()
    rows = run_case_study(config.train, spec, seeds=_seeds(config, seed),
                          data_seed=config.data_seed,
                          epsilon=_epsilon(config, CASE_STUDY_EPSILON))
    _report(ctx, rows, os.path.join(_out_dir(out), 'case_study.csv'), 'Case study')


@invoke_rilltools.command('add-sweep')
@_experiment_options
@click.pass_context
@_reports_errors
def add_sweep(ctx, config_path, seed, out):
    """Accuracy as the knowledge base completeness decreases."""
    config = _load(config_path, seed, PROXY_CONFIG)
    with utils.Timer() as timer:
        rows = run_completeness_sweep(
            config.train, make_task(config.task, config.data, config.data_seed),
            config.sweep.completeness, config.sweep.methods, _seeds(config, seed),
            _epsilon(config), **_sweep_options(config, out))
    _report(ctx, rows, os.path.join(_out_dir(out), 'completeness_sweep.csv'),
            'Completeness sweep took {0}'.format(timer.human))


@invoke_rilltools.command('eps-sweep')
@_experiment_options
@click.pass_context
@_reports_errors
def eps_sweep(ctx, config_path, seed, out):
    """Accuracy of the thresholded transforms per epsilon."""
    config = _load(config_path, seed, PROXY_CONFIG)
    with utils.Timer() as timer:
        rows = run_epsilon_sweep(
            config.train, make_task(config.task, config.data, config.data_seed),
            config.sweep.epsilons, _seeds(config, seed), **_sweep_options(config, out))
    _report(ctx, rows, os.path.join(_out_dir(out), 'epsilon_sweep.csv'),
            'Epsilon sweep took {0}'.format(timer.human))


@invoke_rilltools.command('label-sweep')
@_experiment_options
@click.pass_context
@_reports_errors
def label_sweep(ctx, config_path, seed, out):
    """Accuracy per number of labelled samples per class."""
    config = _load(config_path, seed, PROXY_CONFIG)
    with utils.Timer() as timer:
        rows = run_labelled_data_sweep(
            config.train, config.data, config.sweep.counts,
            ('vanilla',) + tuple(m for m in config.sweep.methods if m != 'vanilla'),
            _seeds(config, seed), _epsilon(config), **_sweep_options(config, out))
    _report(ctx, rows, os.path.join(_out_dir(out), 'labelled_sweep.csv'),
            'Labelled data sweep took {0}'.format(timer.human))


@invoke_rilltools.command('clark-compare')
@_experiment_options
@click.option('--completion', type=click.Choice(['iff', 'grouped']), default='iff',
              show_default=True, help='"iff" rewrites every rule, "grouped" merges the '
                                      'rules sharing a head.')
@click.pass_context
@_reports_errors
def clark_compare(ctx, config_path, seed, out, completion):
    """The sampled knowledge base as is against its completion."""
    config = _load(config_path, seed, PROXY_CONFIG)
    with utils.Timer() as timer:
        rows = run_clark_comparison(
            config.train, make_task(config.task, config.data, config.data_seed),
            _seeds(config, seed), completion, **_sweep_options(config, out))
    _report(ctx, rows, os.path.join(_out_dir(out), 'clark_comparison.csv'),
            'Completion comparison took {0}'.format(timer.human))


@invoke_rilltools.command('op-sweep')
@_experiment_options
@click.pass_context
@_reports_errors
def op_sweep(ctx, config_path, seed, out):
    """Accuracy of the Lukasiewicz and sigmoidal implications."""
    config = _load(config_path, seed, PROXY_CONFIG)
    operators = [('lukasiewicz', config.train.logic.s)] + [
        ('sigmoidal', s) for s in config.sweep.steepness]
    with utils.Timer() as timer:
        rows = run_operator_sweep(
            config.train, make_task(config.task, config.data, config.data_seed), operators,
            config.sweep.methods, _seeds(config, seed), _epsilon(config),
            **_sweep_options(config, out))
    _report(ctx, rows, os.path.join(_out_dir(out), 'operator_sweep.csv'),
            'Operator sweep took {0}'.format(timer.human))


@invoke_rilltools.command('lambda-sweep')
@_experiment_options
@click.option('--method', type=click.Choice(['semantic', 'fuzzy', 'rill_l2', 'rill_hinge',
                                             'rill_l2hinge']),
              default='semantic', show_default=True)
@click.pass_context
@_reports_errors
def lambda_sweep(ctx, config_path, seed, out, method):
    """Accuracy per logic risk coefficient."""
    config = _load(config_path, seed, PROXY_CONFIG)
    train = config.train
    if method in ('rill_hinge', 'rill_l2hinge') and train.logic.epsilon is None:
        train = train.replace(logic__epsilon=DEFAULT_EPSILON)
    with utils.Timer() as timer:
        rows = run_lambda_sweep(
            train, make_task(config.task, config.data, config.data_seed),
            config.sweep.lambdas, _seeds(config, seed), method, **_sweep_options(config, out))
    _report(ctx, rows, os.path.join(_out_dir(out), 'lambda_sweep.csv'),
            'Lambda sweep took {0}'.format(timer.human))


@invoke_rilltools.command('replay')
@click.argument('record', type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@_reports_errors
def replay(ctx, record):
    """Re-runs a saved RunRecord and compares its metrics exactly."""
    result = replay_record(record)
    rows = [OrderedDict([('head', head), ('recorded', acc),
                         ('replayed', result.replayed.final_accuracy.get(head))])
            for head, acc in result.record.final_accuracy.items()]
    if not ctx.obj['quiet']:
        click.echo(tabulate([list(r.values()) for r in rows],
                            headers=['head', 'recorded', 'replayed'],
                            tablefmt=ctx.obj['output'], floatfmt='.6f'))
    if result.identical:
        click.echo('Replay identical.')
    else:
        click.echo('Replay differs from the record.', err=True)
        ctx.exit(1)


def main():
    invoke_rilltools(prog_name='rill')


if __name__ == '__main__':
    main()
