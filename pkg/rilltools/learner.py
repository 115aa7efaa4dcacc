"""Multi-head MLP classifiers and their training on ``task risk + λ * logic
risk``.

The task risk is the cross-entropy on the labelled samples only; the logic
risk is evaluated on every sample of a minibatch, labelled or not, by turning
the softmax outputs into a :class:`rilltools.fuzzy.Valuation`.
"""
import csv
import dataclasses
import json
import os
import struct
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from rilltools import autodiff, logic, utils
from rilltools.autodiff import DiffMatrix, Tape, Var
from rilltools.datasets import Dataset, TaskData
from rilltools.errors import (DivergenceError, DomainError, FormatError, InsufficientDataError,
                              ShapeError, UnmappedPredicateError)
from rilltools.fuzzy import Valuation, make_operator
from rilltools.logic import Atom, Constant, KnowledgeBase
from rilltools.loggers import logger
from rilltools.losses import (OUTER_MAPS, RiskWeights, combined_objective, empirical_logic_risk,
                              empirical_semantic_risk, make_transform)

#: Training methods: ``vanilla`` is the task risk alone, ``fuzzy`` the
#: untransformed logic loss and ``rill_*`` its transformed variants.
METHODS = ('vanilla', 'fuzzy', 'semantic', 'rill_l2', 'rill_hinge', 'rill_l2hinge')

#: Transform each fuzzy method applies to the logic loss
METHOD_TRANSFORMS = {'fuzzy': 'identity', 'rill_l2': 'l2', 'rill_hinge': 'hinge',
                     'rill_l2hinge': 'l2hinge'}

CHECKPOINT_MAGIC = b'RILLCKPT'
CHECKPOINT_VERSION = 1


# Specs
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class MLPSpec(object):
    inputs: int
    hidden: Tuple[int, ...] = (64,)
    #: (name, number of classes) of every classification head
    heads: Tuple[Tuple[str, int], ...] = (('class', 10),)

    def __post_init__(self):
        object.__setattr__(self, 'hidden', tuple(self.hidden))
        object.__setattr__(self, 'heads', tuple((str(n), int(k)) for n, k in self.heads))
        if self.inputs < 1:
            raise ValueError('Input width must be positive, given: {0!r}'.format(self.inputs))
        if not self.hidden or any(w < 1 for w in self.hidden):
            raise ValueError('At least one hidden layer of positive width is needed')
        if not self.heads or any(k < 2 for _, k in self.heads):
            raise ValueError('Every head needs at least two classes')


@dataclass(frozen=True)
class OptimizerSpec(object):
    #: 'adamw' or 'sgd'
    kind: str = 'adamw'
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    #: decoupled decay, AdamW only
    weight_decay: float = 5e-4
    momentum: float = 0.9

    def __post_init__(self):
        if self.kind not in ('adamw', 'sgd'):
            raise ValueError('Unknown optimizer: {0!r}'.format(self.kind))
        if not self.lr > 0:
            raise ValueError('Learning rate must be positive, given: {0!r}'.format(self.lr))
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError('Momentum must be in [0, 1), given: {0!r}'.format(self.momentum))


@dataclass(frozen=True)
class ScheduleSpec(object):
    #: 'step' or 'warmup'
    kind: str = 'step'
    decay_rate: float = 0.7
    decay_step: int = 60
    warmup_epochs: int = 5

    def __post_init__(self):
        if self.kind not in ('step', 'warmup'):
            raise ValueError('Unknown schedule: {0!r}'.format(self.kind))
        if not 0.0 < self.decay_rate <= 1.0:
            raise ValueError('Decay rate must be in (0, 1], given: {0!r}'.format(self.decay_rate))
        if self.decay_step < 1 or self.warmup_epochs < 1:
            raise ValueError('Decay step and warmup epochs must be at least 1')


@dataclass(frozen=True)
class LogicSpec(object):
    method: str = 'fuzzy'
    operator: str = 'reichenbach'
    s: float = 8.0
    b0: float = -0.5
    #: Hinge threshold, required by the hinge methods
    epsilon: Optional[float] = None
    outer_map: str = 'neglog2'
    lam: float = 0.7
    #: Rule file replacing the task's built-in knowledge base
    kb_path: Optional[str] = None
    completeness: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError('Unknown method: {0!r}, expected one of {1}'.format(
                self.method, ', '.join(METHODS)))
        if self.outer_map not in OUTER_MAPS:
            raise ValueError('Unknown outer map: {0!r}'.format(self.outer_map))
        RiskWeights(self.lam)
        if not 0.0 < self.completeness <= 1.0:
            raise ValueError('Completeness must be in (0, 1], given: {0!r}'.format(
                self.completeness))
        if self.method in METHOD_TRANSFORMS:
            make_transform(self.transform, self.epsilon)
        make_operator(self.operator, self.s, self.b0)

    @property
    def transform(self) -> Optional[str]:
        return METHOD_TRANSFORMS.get(self.method)

    @property
    def uses_logic(self) -> bool:
        return self.method != 'vanilla' and self.lam > 0


@dataclass(frozen=True)
class TrainConfig(object):
    epochs: int = 30
    batch_size: int = 64
    seed: int = 2020
    #: Fully supervised epochs, on every ground-truth label, before training
    pretrain_epochs: int = 0
    hidden: Tuple[int, ...] = (64,)
    optimizer: OptimizerSpec = OptimizerSpec()
    schedule: ScheduleSpec = ScheduleSpec()
    logic: LogicSpec = LogicSpec()

    def __post_init__(self):
        object.__setattr__(self, 'hidden', tuple(self.hidden))
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ValueError('Epoch counts cannot be negative')
        if self.batch_size < 1:
            raise ValueError('Batch size must be positive, given: {0!r}'.format(self.batch_size))

    def replace(self, **changes) -> 'TrainConfig':
        """Copy with top-level fields, or ``logic``/``optimizer``/``schedule``
        fields given as ``logic__lam=0`` and the like, replaced."""
        nested = {}
        for key in [k for k in changes if '__' in k]:
            section, name = key.split('__', 1)
            nested.setdefault(section, {})[name] = changes.pop(key)
        for section, values in nested.items():
            changes[section] = dataclasses.replace(getattr(self, section), **values)
        return dataclasses.replace(self, **changes)


def config_hash(config: TrainConfig) -> str:
    return utils.git_blob_hash(json.dumps(dataclasses.asdict(config), sort_keys=True))


# Model
# -----------------------------------------------------------------------------

class MLP(object):
    """Fully connected ReLU trunk shared by several linear softmax heads.

    Parameters live in :attr:`params` as float64 arrays, named
    ``hidden{i}.weight``/``hidden{i}.bias`` and ``head.{name}.weight``/
    ``head.{name}.bias``. Weights are drawn uniformly from
    ``±sqrt(6 / fan_in)``; biases start at zero.
    """

    def __init__(self, spec: MLPSpec, seed: int = 0):
        self.spec = spec
        self.params: 'OrderedDict[str, np.ndarray]' = OrderedDict()
        rng = np.random.default_rng(seed)
        fan_in = spec.inputs
        for i, width in enumerate(spec.hidden):
            self._init_layer(rng, 'hidden{0:d}'.format(i), fan_in, width)
            fan_in = width
        for name, classes in spec.heads:
            self._init_layer(rng, 'head.{0}'.format(name), fan_in, classes)

    def _init_layer(self, rng, prefix: str, fan_in: int, fan_out: int) -> None:
        bound = np.sqrt(6.0 / fan_in)
        self.params[prefix + '.weight'] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        self.params[prefix + '.bias'] = np.zeros(fan_out)

    @classmethod
    def from_parameters(cls, heads: Sequence[Tuple[str, int]],
                        params: Mapping[str, np.ndarray]) -> 'MLP':
        hidden, i = [], 0
        while 'hidden{0:d}.weight'.format(i) in params:
            hidden.append(params['hidden{0:d}.weight'.format(i)].shape[1])
            i += 1
        if not hidden:
            raise FormatError('No hidden layer parameters found')
        model = cls(MLPSpec(params['hidden0.weight'].shape[0], tuple(hidden), tuple(heads)))
        if set(model.params) != set(params):
            raise FormatError('Parameter names do not match the model layout')
        for name, value in params.items():
            if model.params[name].shape != value.shape:
                raise FormatError('Parameter {0} has shape {1}, expected {2}'.format(
                    name, value.shape, model.params[name].shape))
            model.params[name] = np.array(value, dtype=np.float64)
        return model

    @property
    def heads(self) -> Tuple[Tuple[str, int], ...]:
        return self.spec.heads

    def bind(self, tape: Tape, trainable: bool = True) -> Dict[str, Var]:
        """Places the parameters on a tape, as variables or as constants."""
        make = tape.variable if trainable else tape.constant
        return OrderedDict((name, make(value)) for name, value in self.params.items())

    def logits(self, inputs: DiffMatrix, bound: Mapping[str, Var]) -> Dict[str, DiffMatrix]:
        if inputs.value.ndim != 2 or inputs.shape[1] != self.spec.inputs:
            raise ShapeError('Expected inputs of width {0:d}, given shape {1}'.format(
                self.spec.inputs, inputs.shape))
        tape = inputs.tape
        hidden = inputs
        for i in range(len(self.spec.hidden)):
            prefix = 'hidden{0:d}'.format(i)
            hidden = autodiff.relu(tape.record('add_bias', hidden @ bound[prefix + '.weight'],
                                               bound[prefix + '.bias']))
        return OrderedDict(
            (name, tape.record('add_bias', hidden @ bound['head.{0}.weight'.format(name)],
                               bound['head.{0}.bias'.format(name)]))
            for name, _ in self.spec.heads)


def forward(model: MLP, inputs: DiffMatrix,
            bound: Optional[Mapping[str, Var]] = None) -> Dict[str, DiffMatrix]:
    """Softmax rows of every head. Without ``bound`` the parameters enter
    the input's tape as constants.

    :raises ShapeError: If the input width does not match the model.
    """
    if bound is None:
        bound = model.bind(inputs.tape, trainable=False)
    return OrderedDict((name, autodiff.softmax_row(logits))
                       for name, logits in model.logits(inputs, bound).items())


def predict_proba(model: MLP, inputs: np.ndarray) -> Dict[str, np.ndarray]:
    tape = Tape()
    return {name: rows.value for name, rows in forward(model, tape.constant(inputs)).items()}


# Optimizers and schedules
# -----------------------------------------------------------------------------

class AdamW(object):
    """Adam with weight decay applied directly to the parameters."""

    def __init__(self, spec: OptimizerSpec):
        self.spec = spec
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray],
             lr: float) -> None:
        spec = self.spec
        self.t += 1
        for name, value in params.items():
            grad = grads[name]
            m = spec.beta1 * self.m.get(name, 0.0) + (1.0 - spec.beta1) * grad
            v = spec.beta2 * self.v.get(name, 0.0) + (1.0 - spec.beta2) * grad * grad
            self.m[name], self.v[name] = m, v
            m_hat = m / (1.0 - spec.beta1 ** self.t)
            v_hat = v / (1.0 - spec.beta2 ** self.t)
            params[name] = value - lr * (m_hat / (np.sqrt(v_hat) + spec.eps)
                                         + spec.weight_decay * value)


class MomentumSGD(object):

    def __init__(self, spec: OptimizerSpec):
        self.spec = spec
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray],
             lr: float) -> None:
        for name, value in params.items():
            velocity = self.spec.momentum * self.velocity.get(name, 0.0) + grads[name]
            self.velocity[name] = velocity
            params[name] = value - lr * velocity


def make_optimizer(spec: OptimizerSpec):
    return AdamW(spec) if spec.kind == 'adamw' else MomentumSGD(spec)


def learning_rate(schedule: ScheduleSpec, base: float, epoch: int) -> float:
    """Step decay by ``decay_rate`` every ``decay_step`` epochs; the warmup
    variant ramps up linearly over the first ``warmup_epochs`` epochs.
    """
    if schedule.kind == 'warmup' and epoch < schedule.warmup_epochs:
        return base * (epoch + 1) / schedule.warmup_epochs
    return base * schedule.decay_rate ** (epoch // schedule.decay_step)


# Valuations
# -----------------------------------------------------------------------------

def check_predicates(kb: KnowledgeBase, predicates: Mapping[str, Tuple[str, int]]) -> None:
    missing = [p for p in kb.predicates if p not in predicates]
    if missing:
        raise UnmappedPredicateError('Predicates without a (head, class) mapping: {0}'.format(
            ', '.join(missing)))


def needed_atoms(kb: KnowledgeBase, slots: Sequence[str],
                 bindings: Optional[Mapping[str, Sequence[str]]] = None) -> Tuple[Atom, ...]:
    """Ground atoms the knowledge base reads when grounded over the slots."""
    domain = tuple(Constant(s) for s in slots)
    grounding = {v: tuple(Constant(s) for s in ss) for v, ss in (bindings or {}).items()}
    found = OrderedDict()
    for rule in kb.rules:
        for a in logic.atoms(logic.ground(rule, domain, grounding)):
            found[a] = None
    return tuple(found)


def valuation_from_outputs(rows: Mapping[str, Mapping[str, DiffMatrix]],
                           predicates: Mapping[str, Tuple[str, int]],
                           atoms: Optional[Iterable[Atom]] = None,
                           bindings: Optional[Mapping[str, Sequence[str]]] = None) -> Valuation:
    """``dict(f(x))``: the valuation of ``Pred(slot)`` is the softmax
    probability of ``Pred``'s class in its head's output for that slot.

    :param rows: Slot name → head name → softmax rows of the slot's samples.
    :param predicates: Predicate → ``(head, class index)``.
    :param atoms: Atoms to value; every predicate at every slot by default.
    :param bindings: Variable → slot names, for per-slot grounding.
    :raises UnmappedPredicateError: If an atom's predicate has no mapping.
    """
    if atoms is None:
        atoms = [Atom(p, (Constant(s),)) for p in predicates for s in rows]
    values = OrderedDict()
    for a in atoms:
        if a.predicate not in predicates:
            raise UnmappedPredicateError('Predicate {0!r} has no mapping'.format(a.predicate))
        if a.arity != 1 or not a.is_ground:
            raise ShapeError('Only ground unary atoms can be valued, given: {0}'.format(a))
        head, index = predicates[a.predicate]
        values[a] = autodiff.column(rows[a.args[0].name][head], index)
    return Valuation(values, tuple(Constant(s) for s in rows),
                     {v: tuple(Constant(s) for s in ss) for v, ss in (bindings or {}).items()})


def logic_risk_function(spec: LogicSpec) -> Callable[[KnowledgeBase, Sequence[Valuation]], Var]:
    if spec.method == 'semantic':
        return empirical_semantic_risk
    return partial(empirical_logic_risk, make_operator(spec.operator, spec.s, spec.b0),
                   OUTER_MAPS[spec.outer_map](), make_transform(spec.transform, spec.epsilon))


# Evaluation and metrics
# -----------------------------------------------------------------------------

@dataclass
class Evaluation(object):
    accuracy: Dict[str, float]
    #: head → share of samples predicted as each class
    frequencies: Dict[str, np.ndarray]
    #: head → (true class, predicted class) counts
    confusion: Dict[str, np.ndarray]


def evaluate(model: MLP, dataset: Dataset) -> Evaluation:
    """Accuracy, prediction frequencies and confusion counts of every head
    the dataset has labels for."""
    if not len(dataset):
        raise ValueError('Cannot evaluate on an empty dataset')
    probs = predict_proba(model, dataset.inputs)
    accuracy, frequencies, confusion = {}, {}, {}
    for name, classes in model.heads:
        if name not in dataset.labels:
            continue
        predicted = np.argmax(probs[name], axis=1)
        truth = dataset.labels[name]
        accuracy[name] = float(np.mean(predicted == truth))
        frequencies[name] = np.bincount(predicted, minlength=classes) / predicted.size
        counts = np.zeros((classes, classes), dtype=np.int64)
        np.add.at(counts, (truth, predicted), 1)
        confusion[name] = counts
    return Evaluation(accuracy, frequencies, confusion)


@dataclass
class EpochMetrics(object):
    epoch: int
    lr: float
    task_loss: float
    logic_loss: float
    accuracy: Dict[str, float]
    frequencies: Dict[str, List[float]]

    def as_row(self) -> Dict[str, float]:
        row = OrderedDict(epoch=self.epoch, lr=self.lr, task_loss=self.task_loss,
                          logic_loss=self.logic_loss)
        for head, value in self.accuracy.items():
            row['acc_{0}'.format(head)] = value
        for head, values in self.frequencies.items():
            for k, value in enumerate(values):
                row['freq_{0}_{1:d}'.format(head, k)] = value
        return row


class MetricsWriter(object):
    """Append-only CSV of per-epoch metrics; the header is written when the
    file is new or empty.

    >>> with MetricsWriter('metrics.csv') as writer:
    >>>     train(config, task, writer=writer)
    """

    def __init__(self, path: str):
        self.path = path
        self._file = None
        self._writer = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def write(self, metrics: EpochMetrics) -> None:
        row = metrics.as_row()
        if self._writer is None:
            fresh = not os.path.exists(self.path) or os.path.getsize(self.path) == 0
            self._file = open(self.path, 'a', newline='', encoding='utf-8')
            self._writer = csv.DictWriter(self._file, fieldnames=list(row))
            if fresh:
                self._writer.writeheader()
        self._writer.writerow(row)
        self._file.flush()

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file, self._writer = None, None


# Training
# -----------------------------------------------------------------------------

@dataclass
class TrainResult(object):
    model: MLP
    history: List[EpochMetrics] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def final(self) -> Optional[EpochMetrics]:
        return self.history[-1] if self.history else None


def _task_risk(model: MLP, tape: Tape, bound, dataset: Dataset,
               pools: Mapping[str, np.ndarray], rng, batch_size: int) -> Var:
    risk = None
    for head, pool in pools.items():
        rows = pool if pool.size <= batch_size else np.sort(rng.choice(pool, batch_size,
                                                                       replace=False))
        logits = model.logits(tape.constant(dataset.inputs[rows]), bound)[head]
        loss = autodiff.mean(autodiff.cross_entropy_row(logits, dataset.labels[head][rows]))
        risk = loss if risk is None else risk + loss
    return risk if risk is not None else tape.constant(0.0)


def _batch_valuation(model: MLP, tape: Tape, bound, data: TaskData, groups: np.ndarray,
                     atoms: Sequence[Atom]) -> Valuation:
    rows = OrderedDict()
    for j, slot in enumerate(data.slots):
        rows[slot] = forward(model, tape.constant(data.train.inputs[groups[:, j]]), bound)
    return valuation_from_outputs(rows, data.predicates, atoms, data.bindings)


def _fit_epoch(model, optimizer, lr, data, pools, rng, config, kb=None, atoms=(), risk=None):
    train = data.train
    order = rng.permutation(len(train.groups))
    task_sum, logic_sum, steps = 0.0, 0.0, 0
    for start in range(0, order.size, config.batch_size):
        tape = Tape()
        bound = model.bind(tape)
        try:
            task = _task_risk(model, tape, bound, train, pools, rng, config.batch_size)
            objective, logic_value = task, 0.0
            if risk is not None:
                groups = train.groups[order[start:start + config.batch_size]]
                logic_risk = risk(kb, [_batch_valuation(model, tape, bound, data, groups, atoms)])
                objective = combined_objective(task, logic_risk, RiskWeights(config.logic.lam))
                logic_value = logic_risk.item()
        except DomainError as exc:
            raise DivergenceError('Objective became non-finite: {0}'.format(exc)) from exc
        if not np.isfinite(objective.item()):
            raise DivergenceError('Objective became non-finite')
        grads = tape.backward(objective)
        optimizer.step(model.params, {name: grads[var.node] for name, var in bound.items()}, lr)
        task_sum += task.item()
        logic_sum += logic_value
        steps += 1
    return task_sum / max(steps, 1), logic_sum / max(steps, 1)


def train(config: TrainConfig, data: TaskData, kb: Optional[KnowledgeBase] = None,
          writer: Optional[MetricsWriter] = None) -> TrainResult:
    """Trains a fresh model on ``data``.

    Every epoch visits each group of the training set once in minibatches of
    ``batch_size`` groups. Each step adds the cross-entropy of a minibatch of
    labelled samples per head to ``λ`` times the logic risk of the group
    minibatch. Results depend on ``config`` and ``data`` only.

    :param config: Training configuration; ``config.seed`` seeds everything.
    :param data: Task to train on.
    :param kb: Knowledge base to use instead of ``data.kb``.
    :param writer: Optional sink of per-epoch metrics.
    :raises UnmappedPredicateError: If a rule predicate has no head mapping.
    :raises InsufficientDataError: If there is neither a label nor a rule to
        learn from.
    :raises DivergenceError: If the objective becomes non-finite.
    """
    kb = data.kb if kb is None else kb
    uses_logic = config.logic.uses_logic and len(kb) > 0
    atoms, risk = (), None
    if uses_logic:
        check_predicates(kb, data.predicates)
        atoms = needed_atoms(kb, data.slots, data.bindings)
        risk = logic_risk_function(config.logic)

    pools = OrderedDict((head, data.train.labelled_indices(head)) for head, _ in data.heads)
    pools = OrderedDict((head, pool) for head, pool in pools.items() if pool.size)
    if not pools and not uses_logic:
        raise InsufficientDataError('No labelled samples and no rules to learn from')

    started = time.time()
    rng = np.random.default_rng(config.seed)
    model = MLP(MLPSpec(data.train.features, config.hidden, data.heads), seed=config.seed)
    optimizer = make_optimizer(config.optimizer)

    everything = OrderedDict((head, np.arange(len(data.train))) for head, _ in data.heads)
    for epoch in range(config.pretrain_epochs):
        task_loss, _ = _fit_epoch(model, optimizer, config.optimizer.lr, data, everything, rng,
                                  config)
        logger.debug('Pretrain epoch {0:d}: task loss {1:.6f}'.format(epoch, task_loss))
    if config.pretrain_epochs:
        # the rule phase starts from the pretrained weights with fresh moments
        optimizer = make_optimizer(config.optimizer)

    result = TrainResult(model)
    for epoch in range(config.epochs):
        lr = learning_rate(config.schedule, config.optimizer.lr, epoch)
        task_loss, logic_loss = _fit_epoch(model, optimizer, lr, data, pools, rng, config,
                                           kb, atoms, risk)
        evaluation = evaluate(model, data.test)
        metrics = EpochMetrics(epoch, lr, task_loss, logic_loss, evaluation.accuracy,
                               {h: f.tolist() for h, f in evaluation.frequencies.items()})
        result.history.append(metrics)
        if writer is not None:
            writer.write(metrics)
        logger.debug('Epoch {0:d}: task loss {1:.6f}, logic loss {2:.6f}, accuracy {3}'.format(
            epoch, task_loss, logic_loss,
            ', '.join('{0}={1:.4f}'.format(h, a) for h, a in evaluation.accuracy.items())))

    result.wall_time = time.time() - started
    return result


# Checkpoints
# -----------------------------------------------------------------------------

def save_checkpoint(model: MLP, config: TrainConfig, path: str) -> str:
    """Writes the model to a versioned binary file::

        b'RILLCKPT' | version u16 | config hash (40 ascii bytes)
        | head count u16 | per head: name length u16, name, classes u32
        | parameter count u16 | per parameter: name length u16, name,
          ndim u8, dims u32 each, float64 payload

    All integers and floats are little-endian.

    :return: The config hash stored in the file.
    """
    digest = config_hash(config)
    chunks = [CHECKPOINT_MAGIC, struct.pack('<H', CHECKPOINT_VERSION), digest.encode('ascii'),
              struct.pack('<H', len(model.heads))]
    for name, classes in model.heads:
        encoded = name.encode('utf-8')
        chunks += [struct.pack('<H', len(encoded)), encoded, struct.pack('<I', classes)]
    chunks.append(struct.pack('<H', len(model.params)))
    for name, value in model.params.items():
        encoded = name.encode('utf-8')
        chunks += [struct.pack('<H', len(encoded)), encoded, struct.pack('<B', value.ndim),
                   struct.pack('<' + 'I' * value.ndim, *value.shape),
                   np.ascontiguousarray(value, dtype='<f8').tobytes()]
    with open(path, 'wb') as f:
        f.write(b''.join(chunks))
    return digest


class _Reader(object):

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise FormatError('Truncated checkpoint at byte {0:d}'.format(self.offset))
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str) -> Tuple[MLP, str]:
    """Reads a file written by :func:`save_checkpoint`.

    :return: The model and the config hash it was saved with.
    :raises FormatError: On a bad magic, an unknown version or truncated data.
    """
    with open(path, 'rb') as f:
        reader = _Reader(f.read())
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise FormatError('{0} is not a checkpoint file'.format(path))
    version, = reader.unpack('<H')
    if version != CHECKPOINT_VERSION:
        raise FormatError('Unsupported checkpoint version {0:d}'.format(version))
    digest = reader.take(40).decode('ascii')

    heads = []
    for _ in range(reader.unpack('<H')[0]):
        name = reader.take(reader.unpack('<H')[0]).decode('utf-8')
        heads.append((name, reader.unpack('<I')[0]))
    params = OrderedDict()
    for _ in range(reader.unpack('<H')[0]):
        name = reader.take(reader.unpack('<H')[0]).decode('utf-8')
        ndim, = reader.unpack('<B')
        shape = reader.unpack('<' + 'I' * ndim)
        size = int(np.prod(shape)) * 8
        params[name] = np.frombuffer(reader.take(size), dtype='<f8').reshape(shape).astype(np.float64)
    if reader.offset != len(reader.data):
        raise FormatError('Trailing bytes after checkpoint payload')
    return MLP.from_parameters(heads, params), digest
