"""Experiment orchestration: single runs with their persisted
:class:`RunRecord`, bias diagnostics and the parameter sweeps.

Sweeps schedule their runs on a thread pool through an asyncio loop and
merge the results back in submission order, so a sweep's table does not
depend on the number of workers::

    >>> sweep = Sweep(task, cells, workers=4)
    >>> # do other work...
    >>> for record in sweep.records:
    >>>     print(record.final_accuracy)
"""
import asyncio
import csv
import dataclasses
import json
import os
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from rilltools import autodiff, logic, parser, utils
from rilltools.autodiff import Tape
from rilltools.config import DEFAULT_SEEDS, TASK_SPECS, train_config_from_dict
from rilltools.datasets import (Dataset, FourClusterSpec, TaskData, four_cluster_kb,
                                gen_addition_groups, gen_four_cluster, gen_hierarchy)
from rilltools.errors import ConfigError, ShapeError
from rilltools.fuzzy import FuzzyOperator, Reichenbach, logic_likelihood, make_operator
from rilltools.learner import (MetricsWriter, TrainConfig, evaluate, forward, save_checkpoint,
                               train, valuation_from_outputs)
from rilltools.logic import Atom, AtomRef, Constant, Implies, KnowledgeBase
from rilltools.loggers import logger
from rilltools.losses import LossTransform, NegLogBase2

#: Grids of the sweeps
DEFAULT_COMPLETENESS = (0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
DEFAULT_EPSILONS = (0.01, 0.05, 0.1, 0.2, 0.3, 0.4)
DEFAULT_LAMBDAS = (0.001, 0.005, 0.01, 0.05, 0.1, 0.5)
DEFAULT_COUNTS = (10, 5, 3, 1)
DEFAULT_OPERATORS = (('lukasiewicz', 8.0), ('sigmoidal', 4.0), ('sigmoidal', 8.0),
                     ('sigmoidal', 16.0), ('sigmoidal', 32.0))

#: Training settings of the small proxy tasks, used when no config file is given
PROXY_CONFIG = TrainConfig(epochs=40, batch_size=32, hidden=(128,)).replace(
    optimizer__lr=1e-2, schedule__decay_step=20)
#: Short warm-up on every label, then shape labels and the rule
CASE_STUDY_CONFIG = TrainConfig(epochs=40, batch_size=20, pretrain_epochs=5, hidden=(16,)).replace(
    optimizer__lr=1e-2, optimizer__eps=1e-12, schedule__decay_step=60)
CASE_STUDY_EPSILON = 0.2


def make_task(kind: str, spec=None, seed: int = 2020) -> TaskData:
    """Builds a task by kind with its spec (defaults when ``None``)."""
    try:
        cls = TASK_SPECS[kind]
    except KeyError:
        raise ConfigError('Unknown task: {0!r}, expected one of {1}'.format(
            kind, ', '.join(TASK_SPECS)))
    spec = cls() if spec is None else spec
    if kind == 'four_cluster':
        return gen_four_cluster(spec, seed)
    elif kind == 'addition':
        return gen_addition_groups(spec, seed)[0]
    return gen_hierarchy(spec, seed)


def task_kind(spec) -> str:
    for kind, cls in TASK_SPECS.items():
        if isinstance(spec, cls):
            return kind
    raise ConfigError('Not a task spec: {0!r}'.format(spec))


def write_csv(path: str, rows: Sequence[Any], fields: Optional[Sequence[str]] = None) -> None:
    """Writes named tuples or dicts, header first; an empty table still gets
    its header when ``fields`` is given."""
    rows = [r._asdict() if hasattr(r, '_asdict') else dict(r) for r in rows]
    fields = list(fields or (rows[0].keys() if rows else ()))
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


# Runs
# -----------------------------------------------------------------------------

@dataclass
class RunRecord(object):
    """Everything needed to re-run a training run and compare its outcome."""
    config: Dict[str, Any]
    task: str
    data: Dict[str, Any]
    data_seed: int
    seed: int
    history: List[Dict[str, float]] = field(default_factory=list)
    final_accuracy: Dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0
    #: git-style content hash of the full knowledge base file
    kb_hash: str = ''
    #: 'iff' or 'grouped' when the sampled knowledge base was completed
    completion: Optional[str] = None

    def save(self, path: str) -> None:
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(dataclasses.asdict(self), f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> 'RunRecord':
        with open(path, 'r', encoding='utf-8') as f:
            return cls(**json.load(f))


def base_kb(config: TrainConfig, task: TaskData) -> Tuple[KnowledgeBase, str]:
    """The full knowledge base of a run and the content hash of its file."""
    if config.logic.kb_path:
        with open(config.logic.kb_path, 'rb') as f:
            data = f.read()
        return parser.parse_kb(data.decode('utf-8')), utils.git_blob_hash(data)
    return task.kb, utils.git_blob_hash(parser.dump_kb(task.kb))


def complete_kb(kb: KnowledgeBase, completion: Optional[str]) -> KnowledgeBase:
    if completion is None:
        return kb
    try:
        if completion == 'iff':
            return logic.clark_iff_transform(kb)
        elif completion == 'grouped':
            return logic.clark_grouped_completion(kb)
    except ShapeError as exc:
        raise ConfigError('Cannot complete the knowledge base: {0}'.format(exc)) from exc
    raise ConfigError('Unknown completion: {0!r}'.format(completion))


#: Files of a run directory
METRICS_FILE = 'metrics.csv'
CHECKPOINT_FILE = 'model.ckpt'


def run(config: TrainConfig, task: TaskData, data_spec=None, data_seed: int = 2020,
        completion: Optional[str] = None, run_dir: Optional[str] = None) -> RunRecord:
    """Trains once: samples ``completeness`` of the knowledge base with the
    run's seed, optionally completes it and records the outcome.

    :param run_dir: Optional directory receiving the per-epoch
        :data:`METRICS_FILE` and the final model as :data:`CHECKPOINT_FILE`;
        an earlier run's files there are replaced.
    """
    kb, kb_hash = base_kb(config, task)
    kb = complete_kb(logic.sample_kb(kb, config.logic.completeness, config.seed), completion)
    if run_dir is None:
        result = train(config, task, kb)
    else:
        os.makedirs(run_dir, exist_ok=True)
        metrics = os.path.join(run_dir, METRICS_FILE)
        if os.path.exists(metrics):
            os.remove(metrics)
        with MetricsWriter(metrics) as writer:
            result = train(config, task, kb, writer)
        save_checkpoint(result.model, config, os.path.join(run_dir, CHECKPOINT_FILE))
    final = result.final.accuracy if result.final else evaluate(result.model, task.test).accuracy
    record = RunRecord(dataclasses.asdict(config), task.name,
                       dataclasses.asdict(data_spec) if data_spec is not None else {},
                       data_seed, config.seed, [m.as_row() for m in result.history],
                       dict(final), result.wall_time, kb_hash, completion)
    logger.info('Run {0} seed {1:d}: {2} in {3}'.format(
        config.logic.method, config.seed,
        ', '.join('{0}={1:.4f}'.format(h, a) for h, a in final.items()),
        utils.seconds2human(result.wall_time)))
    return record


class ReplayResult(NamedTuple):
    record: RunRecord
    replayed: RunRecord
    identical: bool


def replay_record(path: str) -> ReplayResult:
    """Re-runs a saved record and compares final accuracies and per-epoch
    metrics exactly.

    :raises ConfigError: If the record's knowledge base file changed.
    """
    record = RunRecord.load(path)
    config = train_config_from_dict(record.config)
    if record.task not in TASK_SPECS:
        raise ConfigError('Unknown task in record: {0!r}'.format(record.task))
    spec = TASK_SPECS[record.task](**_tuples(record.data)) if record.data else None
    task = make_task(record.task, spec, record.data_seed)
    if base_kb(config, task)[1] != record.kb_hash:
        raise ConfigError('Knowledge base changed since the run: hash mismatch')
    replayed = run(config, task, spec, record.data_seed, record.completion)
    identical = (replayed.final_accuracy == record.final_accuracy
                 and replayed.history == record.history)
    return ReplayResult(record, replayed, identical)


def _tuples(value):
    # JSON turns tuples into lists; frozen specs need them back
    if isinstance(value, dict):
        return {k: _tuples(v) for k, v in value.items()}
    elif isinstance(value, list):
        return tuple(_tuples(v) for v in value)
    return value


# Diagnostics
# -----------------------------------------------------------------------------

class BiasRow(NamedTuple):
    premise: float
    consequent: float
    loss: float
    grad_norm: float


def bias_scatter(op: FuzzyOperator, g: NegLogBase2, t: LossTransform, n: int,
                 seed: int = 2020) -> List[BiasRow]:
    """Samples ``G(p), G(q) ~ U(0, 1)`` and reports the transformed loss of
    ``p -> q`` together with ``|∂loss / ∂G(p)|``."""
    if n < 0:
        raise ValueError('Sample count cannot be negative: {0!r}'.format(n))
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    tape = Tape()
    p = tape.variable(rng.uniform(0.0, 1.0, size=n))
    q = tape.variable(rng.uniform(0.0, 1.0, size=n))
    loss = t(g(op(p, q)))
    grad, = tape.gradient(autodiff.total(loss), [p])
    return [BiasRow(*map(float, row))
            for row in zip(p.value, q.value, loss.value, np.abs(grad))]


class LossRow(NamedTuple):
    index: int
    loss: float
    relevant: bool


def _unary_literal(f) -> Atom:
    if not isinstance(f, AtomRef) or f.atom.arity != 1:
        raise ShapeError('Expected a unary atom, given: {0!r}'.format(f))
    return f.atom


def loss_distribution_report(model, dataset: Dataset, rule, predicates,
                             op: FuzzyOperator = Reichenbach(),
                             g: NegLogBase2 = NegLogBase2()) -> List[LossRow]:
    """Per-sample logic loss of a single implication rule
    ``forall x: P(x) -> Q(x)``. A sample is relevant when, by its ground
    truth labels, ``P`` or ``Q`` holds for it.

    :raises ShapeError: If the rule is not a single implication between
        unary atoms.
    """
    prefix, matrix = logic.split_prefix(rule)
    if not isinstance(matrix, Implies) or len(prefix) != 1:
        raise ShapeError('Expected a rule forall x: P(x) -> Q(x), given: {0!r}'.format(rule))
    premise, consequent = _unary_literal(matrix.left), _unary_literal(matrix.right)
    if not len(dataset):
        return []

    tape = Tape()
    slot = 's'
    rows = {slot: forward(model, tape.constant(dataset.inputs))}
    grounded = logic.ground(rule, (Constant(slot),))
    valuation = valuation_from_outputs(rows, predicates, logic.atoms(grounded))
    losses = g(logic_likelihood(op, grounded, valuation)).value

    def holds(a: Atom) -> np.ndarray:
        head, index = predicates[a.predicate]
        return dataset.labels[head] == index

    relevant = holds(premise) | holds(consequent)
    return [LossRow(i, float(loss), bool(flag))
            for i, (loss, flag) in enumerate(zip(losses, relevant))]


# Sweeps
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class Cell(object):
    """One run of a sweep: the row key it reports under and its config."""
    key: Tuple[Tuple[str, Any], ...]
    config: TrainConfig
    completion: Optional[str] = None
    #: Task spec of this cell when it differs from the sweep's task
    data: Any = None


class Sweep(object):
    """Runs the cells of a sweep in a thread pool, starting at construction.
    Public members block until every run has finished. Each run uses its own
    tapes and seed; results are merged in cell order.

    :param task: Task of every cell without a ``data`` spec of its own.
    :param cells: Runs to perform.
    :param workers: Worker threads (default 1).
    :param record_dir: Optional directory receiving one RunRecord JSON file
        per run and, next to it, the run directory of the same name with its
        metrics and checkpoint.
    """
    #: Total wall time, set once every run has finished.
    exec_took = None

    def __init__(self, task, cells: Sequence[Cell], workers: int = 1,
                 data_spec=None, data_seed: int = 2020, record_dir: Optional[str] = None):
        if workers < 1:
            raise ValueError('At least one worker is needed, given: {0!r}'.format(workers))
        self.exec_took = time.time()
        self._task = task
        self._tasks = {cell.data: make_task(task_kind(cell.data), cell.data, data_seed)
                       for cell in cells if cell.data is not None}
        self._cells = list(cells)
        self._workers = workers
        self._data_spec = data_spec
        self._data_seed = data_seed
        self._record_dir = record_dir
        self._records = None
        self._loop = asyncio.new_event_loop()
        self._running = self._loop.create_task(self._run())

    def __len__(self) -> int:
        return len(self._cells)

    @property
    def records(self) -> List[RunRecord]:
        self._await()
        return list(self._records)

    def _await(self) -> None:
        if self._records is None:
            try:
                self._loop.run_until_complete(self._running)
            finally:
                self._loop.close()

    def _run_cell(self, cell: Cell) -> RunRecord:
        if cell.data is not None:
            task, spec = self._tasks[cell.data], cell.data
        else:
            task, spec = self._task, self._data_spec
        if self._record_dir:
            name = '{0}-seed{1:d}'.format(
                '-'.join('{0}{1}'.format(k, v) for k, v in cell.key), cell.config.seed)
            record = run(cell.config, task, spec, self._data_seed, cell.completion,
                         os.path.join(self._record_dir, name))
            record.save(os.path.join(self._record_dir, name + '.json'))
        else:
            record = run(cell.config, task, spec, self._data_seed, cell.completion)
        logger.info('Sweep cell {0}: {1}'.format(
            ', '.join('{0}={1}'.format(k, v) for k, v in cell.key), record.final_accuracy))
        return record

    async def _run(self) -> None:
        with ThreadPoolExecutor(max_workers=self._workers) as pool:
            futures = [self._loop.run_in_executor(pool, self._run_cell, cell)
                       for cell in self._cells]
            self._records = await asyncio.gather(*futures)
        self.exec_took = time.time() - self.exec_took
        logger.debug('Sweep of {0:d} runs took {1}'.format(
            len(self._cells), utils.seconds2human(self.exec_took)))

    def table(self) -> List[Dict[str, Any]]:
        """One row per distinct cell key with mean and population standard
        deviation of every head's final accuracy across the key's runs."""
        groups: 'OrderedDict[tuple, List[RunRecord]]' = OrderedDict()
        for cell, record in zip(self._cells, self.records):
            groups.setdefault(cell.key, []).append(record)
        rows = []
        for key, records in groups.items():
            row = OrderedDict(key)
            for head in records[0].final_accuracy:
                mean, std = utils.mean_std(r.final_accuracy[head] for r in records)
                row['acc_{0}_mean'.format(head)] = mean
                row['acc_{0}_std'.format(head)] = std
            row['runs'] = len(records)
            rows.append(row)
        return rows


def _method_config(config: TrainConfig, method: str, epsilon: Optional[float]) -> TrainConfig:
    logic_ = config.logic
    if method in ('rill_hinge', 'rill_l2hinge') and logic_.epsilon is None:
        if epsilon is None:
            raise ConfigError('Method {0} requires epsilon'.format(method))
        return config.replace(logic__method=method, logic__epsilon=epsilon)
    return config.replace(logic__method=method)


def run_completeness_sweep(config: TrainConfig, task: TaskData,
                           completeness: Sequence[float] = DEFAULT_COMPLETENESS,
                           methods: Sequence[str] = ('fuzzy', 'rill_hinge'),
                           seeds: Sequence[int] = DEFAULT_SEEDS, epsilon: Optional[float] = None,
                           **options) -> List[Dict[str, Any]]:
    """Accuracy per (completeness, method), averaged over the seeds."""
    cells = [Cell((('completeness', c), ('method', m)),
                  _method_config(config, m, epsilon).replace(seed=s, logic__completeness=c))
             for c in completeness for m in methods for s in seeds]
    return Sweep(task, cells, **options).table()


def run_epsilon_sweep(config: TrainConfig, task: TaskData,
                      epsilons: Sequence[float] = DEFAULT_EPSILONS,
                      seeds: Sequence[int] = DEFAULT_SEEDS,
                      methods: Sequence[str] = ('rill_hinge', 'rill_l2hinge'),
                      reference: bool = True, **options) -> List[Dict[str, Any]]:
    """Accuracy per (ε, transform) for the thresholded transforms. With
    ``reference`` the table starts with an ``epsilon=0.0`` row of the
    untransformed fuzzy loss, the limit of the hinge as ε goes to 0.
    """
    for eps in epsilons:
        if not 0.0 < eps < 1.0:
            raise ConfigError('epsilon must be in (0, 1), given: {0!r}'.format(eps))
    cells = []
    if reference:
        cells += [Cell((('epsilon', 0.0), ('method', 'fuzzy')),
                       config.replace(seed=s, logic__method='fuzzy', logic__epsilon=None))
                  for s in seeds]
    cells += [Cell((('epsilon', e), ('method', m)),
                   config.replace(seed=s, logic__method=m, logic__epsilon=e))
              for e in epsilons for m in methods for s in seeds]
    return Sweep(task, cells, **options).table()


def run_labelled_data_sweep(config: TrainConfig, spec,
                            counts: Sequence[int] = DEFAULT_COUNTS,
                            methods: Sequence[str] = ('vanilla', 'fuzzy', 'rill_hinge'),
                            seeds: Sequence[int] = DEFAULT_SEEDS, epsilon: Optional[float] = None,
                            **options) -> List[Dict[str, Any]]:
    """Accuracy per (labelled samples per class, method).

    :param spec: Spec of a task with a ``labelled_per_class`` field; every
        count gets its own copy of the task.
    """
    if not hasattr(spec, 'labelled_per_class'):
        raise ConfigError('Task {0} has no labelled_per_class setting'.format(task_kind(spec)))
    if any(c < 1 for c in counts):
        raise ConfigError('Labelled counts must be at least 1')
    cells = [Cell((('labelled', c), ('method', m)),
                  _method_config(config, m, epsilon).replace(seed=s), None,
                  dataclasses.replace(spec, labelled_per_class=c))
             for c in counts for m in methods for s in seeds]
    return Sweep(None, cells, **options).table()


def run_clark_comparison(config: TrainConfig, task: TaskData,
                         seeds: Sequence[int] = DEFAULT_SEEDS, completion: str = 'iff',
                         **options) -> List[Dict[str, Any]]:
    """Accuracy with the sampled knowledge base as is and after completion.

    :raises ConfigError: If the knowledge base is empty or a rule is not an
        implication.
    """
    kb, _ = base_kb(config, task)
    if not len(kb):
        raise ConfigError('The knowledge base is empty')
    complete_kb(kb, completion)
    cells = [Cell((('kb', name),), config.replace(seed=s), mode)
             for name, mode in (('original', None), (completion, completion)) for s in seeds]
    return Sweep(task, cells, **options).table()


def run_operator_sweep(config: TrainConfig, task: TaskData,
                       operators: Sequence[Tuple[str, float]] = DEFAULT_OPERATORS,
                       methods: Sequence[str] = ('fuzzy', 'rill_hinge'),
                       seeds: Sequence[int] = DEFAULT_SEEDS, epsilon: Optional[float] = None,
                       **options) -> List[Dict[str, Any]]:
    """Accuracy per (operator, method) at the config's completeness."""
    cells = []
    for name, s in operators:
        make_operator(name, s)
        label = name if name != 'sigmoidal' else 'sigmoidal_s{0:g}'.format(s)
        for m in methods:
            for seed in seeds:
                cells.append(Cell((('operator', label), ('method', m)), _method_config(
                    config, m, epsilon).replace(seed=seed, logic__operator=name, logic__s=s)))
    return Sweep(task, cells, **options).table()


def run_lambda_sweep(config: TrainConfig, task: TaskData,
                     lambdas: Sequence[float] = DEFAULT_LAMBDAS,
                     seeds: Sequence[int] = DEFAULT_SEEDS, method: str = 'semantic',
                     **options) -> List[Dict[str, Any]]:
    """Accuracy per λ, for the semantic loss by default."""
    cells = [Cell((('lambda', lam), ('method', method)),
                  config.replace(seed=s, logic__method=method, logic__lam=lam))
             for lam in lambdas for s in seeds]
    return Sweep(task, cells, **options).table()


# Case study
# -----------------------------------------------------------------------------

def run_case_study(config: TrainConfig = CASE_STUDY_CONFIG,
                   spec: FourClusterSpec = FourClusterSpec(),
                   directions: Sequence[str] = ('blue_circle', 'circle_blue'),
                   methods: Sequence[str] = ('fuzzy', 'rill_hinge'),
                   seeds: Sequence[int] = DEFAULT_SEEDS, data_seed: int = 2020,
                   epsilon: Optional[float] = CASE_STUDY_EPSILON) -> List[Dict[str, Any]]:
    """Four-cluster study: a model pretrained on both labels keeps training
    with shape labels and the rule only. Reports per-head accuracy and the
    share of test samples predicted blue, before and after, averaged over
    seeds."""
    data = gen_four_cluster(spec, data_seed)
    rows = []
    for direction in directions:
        task = dataclasses.replace(data, kb=four_cluster_kb(direction))
        for method in methods:
            before, after = [], []
            for seed in seeds:
                cfg = _method_config(config, method, epsilon).replace(seed=seed)
                before.append(evaluate(train(cfg.replace(epochs=0), task).model, task.test))
                after.append(evaluate(train(cfg, task).model, task.test))
            row = OrderedDict([('direction', direction), ('method', method)])
            for stage, results in (('before', before), ('after', after)):
                for head in ('shape', 'colour'):
                    row['{0}_{1}'.format(head, stage)] = float(np.mean(
                        [r.accuracy[head] for r in results]))
                row['blue_{0}'.format(stage)] = float(np.mean(
                    [r.frequencies['colour'][0] for r in results]))
            logger.info('Case study {0} {1}: {2}'.format(direction, method, dict(row)))
            rows.append(row)
    return rows
