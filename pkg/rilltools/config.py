"""Experiment configuration files.

An INI file with up to seven sections; every key is optional and falls back
to its default::

    [train]
    epochs = 30
    batch_size = 64
    seed = 2020

    [model]
    hidden = 256, 512

    [optimizer]
    kind = adamw
    lr = 1e-4

    [schedule]
    kind = step
    decay_rate = 0.7
    decay_step = 60

    [logic]
    method = rill_hinge
    operator = reichenbach
    epsilon = 0.1
    lam = 0.7
    completeness = 0.4

    [data]
    task = addition
    seed = 2020
    labelled_per_class = 10

    [sweep]
    seeds = 2020, 2021, 2022
    methods = fuzzy, rill_hinge
    workers = 2

Lists are comma separated; nested lists (the four-cluster ``centers``)
separate their items with ``|``. ``none`` leaves an optional value unset.
"""
import configparser
import dataclasses
import typing
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Tuple

from rilltools.datasets import AdditionTaskSpec, FourClusterSpec, HierarchyTaskSpec
from rilltools.errors import ConfigError
from rilltools.learner import LogicSpec, OptimizerSpec, ScheduleSpec, TrainConfig

#: Task kinds and the spec class of each
TASK_SPECS = OrderedDict([('four_cluster', FourClusterSpec), ('addition', AdditionTaskSpec),
                          ('hierarchy', HierarchyTaskSpec)])

#: Seeds of the reported runs
DEFAULT_SEEDS = (2020, 2021, 2022, 2023, 2024)


@dataclass(frozen=True)
class SweepSpec(object):
    completeness: Tuple[float, ...] = (0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    methods: Tuple[str, ...] = ('fuzzy', 'rill_hinge')
    seeds: Tuple[int, ...] = DEFAULT_SEEDS
    epsilons: Tuple[float, ...] = (0.01, 0.05, 0.1, 0.2, 0.3, 0.4)
    lambdas: Tuple[float, ...] = (0.001, 0.005, 0.01, 0.05, 0.1, 0.5)
    counts: Tuple[int, ...] = (10, 5, 3, 1)
    #: Steepness values of the sigmoidal operators in the operator sweep
    steepness: Tuple[float, ...] = (4.0, 8.0, 16.0, 32.0)
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError('workers must be at least 1, given: {0!r}'.format(self.workers))
        if not self.seeds:
            raise ValueError('At least one seed is needed')


@dataclass(frozen=True)
class ExperimentConfig(object):
    train: TrainConfig = TrainConfig()
    task: str = 'addition'
    data: Any = AdditionTaskSpec()
    data_seed: int = 2020
    sweep: SweepSpec = SweepSpec()


def _convert(value: str, kind, key: str):
    origin, args = typing.get_origin(kind), typing.get_args(kind)
    if origin is typing.Union:
        if value.strip().lower() in ('', 'none'):
            return None
        kind = next(a for a in args if a is not type(None))
        origin, args = typing.get_origin(kind), typing.get_args(kind)
    if origin is tuple:
        inner = args[0]
        if typing.get_origin(inner) is tuple:
            return tuple(_convert(part, inner, key) for part in value.split('|') if part.strip())
        return tuple(_convert(part, inner, key) for part in value.split(',') if part.strip())
    value = value.strip()
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError('{0}: expected {1}, given: {2!r}'.format(key, kind.__name__, value))


def _build(cls, values: Mapping[str, str], section: str, skip: Tuple[str, ...] = ()):
    known = {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError('Unknown key {0!r} in section [{1}]'.format(key, section))
        kwargs[key] = _convert(raw, hints[key], '{0}.{1}'.format(section, key))
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError('[{0}] {1}'.format(section, exc)) from exc


def parse_config(text: str, seed: Optional[int] = None) -> ExperimentConfig:
    """Builds an :class:`ExperimentConfig` from INI text.

    :param seed: Overrides ``[train] seed`` when given.
    :raises ConfigError: On syntax errors, unknown sections or keys and
        invalid values.
    """
    reader = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=('#', ';'))
    try:
        reader.read_string(text)
    except configparser.Error as exc:
        raise ConfigError('Invalid config file: {0}'.format(exc)) from exc

    sections = {name: dict(reader.items(name)) for name in reader.sections()}
    unknown = set(sections) - {'train', 'model', 'optimizer', 'schedule', 'logic', 'data', 'sweep'}
    if unknown:
        raise ConfigError('Unknown section(s): {0}'.format(', '.join(sorted(unknown))))

    train_values = dict(sections.get('train', {}))
    model = sections.get('model', {})
    if set(model) - {'hidden'}:
        raise ConfigError('Unknown key(s) in section [model]: {0}'.format(
            ', '.join(sorted(set(model) - {'hidden'}))))
    if 'hidden' in model:
        train_values['hidden'] = model['hidden']
    nested = OrderedDict([
        ('optimizer', _build(OptimizerSpec, sections.get('optimizer', {}), 'optimizer')),
        ('schedule', _build(ScheduleSpec, sections.get('schedule', {}), 'schedule')),
        ('logic', _build(LogicSpec, sections.get('logic', {}), 'logic')),
    ])
    train = _build(TrainConfig, train_values, 'train', skip=tuple(nested))
    train = dataclasses.replace(train, **nested)
    if seed is not None:
        train = dataclasses.replace(train, seed=seed)

    data = dict(sections.get('data', {}))
    task = data.pop('task', 'addition').strip()
    if task not in TASK_SPECS:
        raise ConfigError('Unknown task: {0!r}, expected one of {1}'.format(
            task, ', '.join(TASK_SPECS)))
    data_seed = _convert(data.pop('seed', '2020'), int, 'data.seed')
    spec = _build(TASK_SPECS[task], data, 'data')

    return ExperimentConfig(train, task, spec, data_seed,
                            _build(SweepSpec, sections.get('sweep', {}), 'sweep'))


def load_config(path: Optional[str] = None, seed: Optional[int] = None) -> ExperimentConfig:
    """Reads a config file; without a path every default applies."""
    if path is None:
        config = ExperimentConfig()
        return config if seed is None else dataclasses.replace(
            config, train=dataclasses.replace(config.train, seed=seed))
    with open(path, 'r', encoding='utf-8') as f:
        return parse_config(f.read(), seed)


def train_config_from_dict(values: Dict[str, Any]) -> TrainConfig:
    """Inverse of ``dataclasses.asdict`` for :class:`TrainConfig`."""
    values = dict(values)
    try:
        nested = {'optimizer': OptimizerSpec(**values.pop('optimizer', {})),
                  'schedule': ScheduleSpec(**values.pop('schedule', {})),
                  'logic': LogicSpec(**values.pop('logic', {}))}
        return TrainConfig(**values, **nested)
    except (TypeError, ValueError) as exc:
        raise ConfigError('Invalid training config: {0}'.format(exc)) from exc
