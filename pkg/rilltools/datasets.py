"""Datasets the experiments train on.

Every task is delivered as a :class:`TaskData`: a train and a test
:class:`Dataset` plus the information needed to turn a model's outputs into
atom valuations, that is, which ``(head, class)`` pair a predicate reads and
how samples are grouped into the slots a rule's variables range over.
"""
import gzip
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from rilltools import logic, parser
from rilltools.errors import FormatError, InsufficientDataError, SeparabilityError
from rilltools.logic import KnowledgeBase
from rilltools.loggers import logger

#: Colour and shape names of the four-cluster task; cluster ``k`` has colour
#: ``COLOURS[k]`` and shape ``SHAPES[k]``.
COLOURS = ('Blue', 'Green', 'Red', 'Gray')
SHAPES = ('Circle', 'Square', 'Triangle', 'Star')

#: IDX magic numbers
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

#: Linear classifier accuracy a generated four-cluster dataset must reach
SEPARABILITY_THRESHOLD = 0.99


@dataclass
class Dataset(object):
    """Samples with their ground-truth labels.

    :param inputs: ``(n, features)`` float array.
    :param labels: Head name → ``(n,)`` class indices (always complete, used
        for evaluation).
    :param label_mask: Head name → ``(n,)`` booleans, the labels training
        is allowed to see.
    :param groups: ``(g, slots)`` row indices; row ``i`` of groups fills the
        slots of one rule instantiation.
    """
    inputs: np.ndarray
    labels: Dict[str, np.ndarray]
    label_mask: Dict[str, np.ndarray]
    groups: np.ndarray

    def __post_init__(self):
        n = self.inputs.shape[0]
        for head, labels in self.labels.items():
            if labels.shape != (n,):
                raise ValueError('Labels of head {0!r} do not match {1:d} samples'.format(head, n))
            self.label_mask.setdefault(head, np.zeros(n, dtype=bool))

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def features(self) -> int:
        return self.inputs.shape[1]

    def labelled_indices(self, head: str) -> np.ndarray:
        return np.flatnonzero(self.label_mask[head])


@dataclass
class TaskData(object):
    name: str
    train: Dataset
    test: Dataset
    #: (head name, number of classes), in model order
    heads: Tuple[Tuple[str, int], ...]
    #: predicate name → (head, class index)
    predicates: Dict[str, Tuple[str, int]]
    #: full knowledge base of the task
    kb: KnowledgeBase
    #: slot constant names of a group, in column order of ``Dataset.groups``
    slots: Tuple[str, ...] = ('s',)
    #: quantified variable → the slots it ranges over; others range over all
    bindings: Dict[str, Tuple[str, ...]] = field(default_factory=dict)


def _singleton_groups(n: int) -> np.ndarray:
    return np.arange(n, dtype=np.int64).reshape(n, 1)


def linear_fit_accuracy(inputs: np.ndarray, labels: np.ndarray) -> float:
    """Training accuracy of a least-squares one-vs-rest linear classifier."""
    classes = int(labels.max()) + 1
    design = np.hstack([inputs, np.ones((inputs.shape[0], 1))])
    targets = np.eye(classes)[labels]
    weights = np.linalg.lstsq(design, targets, rcond=None)[0]
    return float(np.mean(np.argmax(design @ weights, axis=1) == labels))


def stratified_labelled_indices(labels: np.ndarray, per_class: int, seed: int) -> np.ndarray:
    """Sorted indices of ``per_class`` samples of every class, chosen
    uniformly without replacement.

    :raises InsufficientDataError: If a class has fewer samples.
    """
    if per_class < 1:
        raise ValueError('per_class must be at least 1, given: {0!r}'.format(per_class))
    rng = np.random.default_rng(seed)
    chosen = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if members.size < per_class:
            raise InsufficientDataError('Class {0} has {1:d} samples, {2:d} needed'.format(
                c, members.size, per_class))
        chosen.append(rng.choice(members, size=per_class, replace=False))
    return np.sort(np.concatenate(chosen))


# Four clusters
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class FourClusterSpec(object):
    centers: Tuple[Tuple[float, float], ...] = ((-2.0, -2.0), (2.0, -2.0), (-2.0, 2.0), (2.0, 2.0))
    spread: float = 0.5
    per_cluster: int = 200
    train_fraction: float = 0.25


def four_cluster_kb(direction: str = 'blue_circle') -> KnowledgeBase:
    """``Blue(x) -> Circle(x)`` or, with ``circle_blue``, the converse."""
    if direction not in ('blue_circle', 'circle_blue'):
        raise ValueError('Unknown rule direction: {0!r}'.format(direction))
    premise, consequent = ('Blue', 'Circle') if direction == 'blue_circle' else ('Circle', 'Blue')
    rule = logic.Forall('x', logic.Implies(logic.atom(premise, 'x'), logic.atom(consequent, 'x')))
    return KnowledgeBase.from_rules([rule])


def gen_four_cluster(spec: FourClusterSpec = FourClusterSpec(), seed: int = 2020,
                     direction: str = 'blue_circle') -> TaskData:
    """Four 2-D Gaussian clusters, each with one colour and one shape. The
    training split holds ``train_fraction`` of every cluster and exposes only
    the shape labels.

    :raises SeparabilityError: If a linear classifier on the full labels scores
        below :data:`SEPARABILITY_THRESHOLD`.
    """
    if len(spec.centers) != 4:
        raise ValueError('Four cluster centres needed, given: {0:d}'.format(len(spec.centers)))
    if spec.spread < 0:
        raise ValueError('Spread cannot be negative: {0!r}'.format(spec.spread))
    rng = np.random.default_rng(seed)
    centers = np.asarray(spec.centers, dtype=np.float64)
    cluster = np.repeat(np.arange(4), spec.per_cluster)
    points = centers[cluster] + rng.normal(scale=spec.spread, size=(cluster.size, 2))

    accuracy = linear_fit_accuracy(points, cluster)
    if accuracy < SEPARABILITY_THRESHOLD:
        raise SeparabilityError('Linear fit accuracy {0:.3f} below {1}'.format(
            accuracy, SEPARABILITY_THRESHOLD))

    train_count = max(1, int(round(spec.per_cluster * spec.train_fraction)))
    train_idx = stratified_labelled_indices(cluster, train_count, seed)
    test_idx = np.setdiff1d(np.arange(cluster.size), train_idx)

    def split(idx, shape_labels):
        n = idx.size
        return Dataset(points[idx], {'shape': cluster[idx], 'colour': cluster[idx]},
                       {'shape': np.full(n, shape_labels), 'colour': np.zeros(n, dtype=bool)},
                       _singleton_groups(n))

    predicates = {name: ('colour', k) for k, name in enumerate(COLOURS)}
    predicates.update({name: ('shape', k) for k, name in enumerate(SHAPES)})
    logger.debug('Four clusters: {0:d} train, {1:d} test'.format(train_idx.size, test_idx.size))
    return TaskData('four_cluster', split(train_idx, True), split(test_idx, False),
                    (('shape', 4), ('colour', 4)), predicates, four_cluster_kb(direction))


# Gaussian blobs
# -----------------------------------------------------------------------------

def gen_blobs(n_classes: int = 10, dim: int = 16, per_class: int = 100, margin: float = 4.0,
              seed: int = 2020) -> Tuple[np.ndarray, np.ndarray]:
    """Isotropic unit-variance Gaussian blobs whose centres lie at distance
    ``margin`` from the origin in random directions.

    :return: ``(inputs, labels)``, grouped by class.
    """
    if n_classes < 2 or dim < 1 or per_class < 1:
        raise ValueError('Need at least two classes, one dimension and one sample per class')
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(n_classes, dim))
    centers = margin * directions / np.linalg.norm(directions, axis=1, keepdims=True)
    labels = np.repeat(np.arange(n_classes), per_class)
    inputs = centers[labels] + rng.normal(size=(labels.size, dim))
    return inputs, labels


# Addition equations
# -----------------------------------------------------------------------------

#: Slot constants of an equation group ``a + b = 10 * c + d``
ADDITION_SLOTS = ('s1', 's2', 's3', 's4')


@dataclass(frozen=True)
class AdditionTaskSpec(object):
    #: 'blobs' or 'mnist'
    base: str = 'blobs'
    train_groups: int = 1000
    test_samples_per_class: int = 100
    pool_per_class: int = 100
    labelled_per_class: int = 10
    dim: int = 32
    margin: float = 3.0
    #: directory holding the four standard MNIST IDX files
    mnist_dir: Optional[str] = None


def addition_predicate(slot: int, digit: int) -> str:
    return 'D{0:d}_{1:d}'.format(slot, digit)


def addition_kb() -> KnowledgeBase:
    """The 100 rules ``D1_a(x1) & D2_b(x2) -> D3_c(x3) & D4_d(x4)`` with
    ``a + b = 10 * c + d``."""
    rules = []
    for a in range(10):
        for b in range(10):
            carry, units = divmod(a + b, 10)
            body = logic.Implies(
                logic.And(logic.atom(addition_predicate(1, a), 'x1'),
                          logic.atom(addition_predicate(2, b), 'x2')),
                logic.And(logic.atom(addition_predicate(3, carry), 'x3'),
                          logic.atom(addition_predicate(4, units), 'x4')))
            rules.append(logic.forall(['x1', 'x2', 'x3', 'x4'], body))
    return KnowledgeBase.from_rules(rules)


def equation_digits(a: int, b: int) -> Tuple[int, int, int, int]:
    carry, units = divmod(a + b, 10)
    return a, b, carry, units


def _addition_base(spec: AdditionTaskSpec, seed: int):
    if spec.base == 'blobs':
        inputs, labels = gen_blobs(10, spec.dim, spec.pool_per_class + spec.test_samples_per_class,
                                   spec.margin, seed)
        test = np.zeros(labels.size, dtype=bool)
        for c in range(10):
            test[np.flatnonzero(labels == c)[spec.pool_per_class:]] = True
        return (inputs[~test], labels[~test]), (inputs[test], labels[test])
    elif spec.base == 'mnist':
        if not spec.mnist_dir:
            raise ValueError('The mnist base needs mnist_dir')
        train = load_mnist(spec.mnist_dir, 'train')
        test = load_mnist(spec.mnist_dir, 't10k')
        keep = stratified_labelled_indices(train[1], spec.pool_per_class, seed)
        test_keep = stratified_labelled_indices(test[1], spec.test_samples_per_class, seed)
        return (train[0][keep], train[1][keep]), (test[0][test_keep], test[1][test_keep])
    raise ValueError('Unknown base dataset: {0!r}'.format(spec.base))


def gen_addition_groups(spec: AdditionTaskSpec = AdditionTaskSpec(),
                        seed: int = 2020) -> Tuple[TaskData, str]:
    """Equation groups ``(x1, x2, x3, x4)`` of digit samples with
    ``x1 + x2 = 10 * x3 + x4``. Operands are drawn uniformly; every sample
    of the pool may serve several groups.

    :return: The task and the text of its 100-rule knowledge base file.
    :raises InsufficientDataError: If a digit has fewer than four samples.
    """
    (pool, pool_labels), (test_inputs, test_labels) = _addition_base(spec, seed)
    members = [np.flatnonzero(pool_labels == d) for d in range(10)]
    for digit, rows in enumerate(members):
        if rows.size < 4:
            raise InsufficientDataError('Digit {0:d} has {1:d} samples, 4 needed'.format(
                digit, rows.size))

    rng = np.random.default_rng(seed)
    operands = rng.integers(0, 10, size=(spec.train_groups, 2))
    groups = np.empty((spec.train_groups, 4), dtype=np.int64)
    for i, (a, b) in enumerate(operands):
        for slot, digit in enumerate(equation_digits(int(a), int(b))):
            groups[i, slot] = rng.choice(members[digit])

    labelled = np.zeros(pool_labels.size, dtype=bool)
    labelled[stratified_labelled_indices(pool_labels, spec.labelled_per_class, seed)] = True
    train = Dataset(pool, {'digit': pool_labels}, {'digit': labelled}, groups)
    test = Dataset(test_inputs, {'digit': test_labels}, {}, _singleton_groups(test_labels.size))

    predicates = {addition_predicate(slot, d): ('digit', d) for slot in range(1, 5) for d in range(10)}
    bindings = {'x{0:d}'.format(k): (slot,) for k, slot in enumerate(ADDITION_SLOTS, start=1)}
    kb = addition_kb()
    text = parser.dump_kb(kb, header='a + b = 10 * c + d, one rule per equation')
    task = TaskData('addition', train, test, (('digit', 10),), predicates, kb,
                    ADDITION_SLOTS, bindings)
    return task, text


# Class hierarchy
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class HierarchyTaskSpec(object):
    super_classes: int = 5
    sub_classes: int = 4
    dim: int = 16
    train_per_class: int = 60
    test_per_class: int = 40
    super_margin: float = 6.0
    sub_margin: float = 3.0
    labelled_per_class: int = 5


def hierarchy_taxonomy(spec: HierarchyTaskSpec) -> Dict[str, Tuple[str, ...]]:
    return {'S{0:d}'.format(k): tuple('S{0:d}_{1:d}'.format(k, m) for m in range(spec.sub_classes))
            for k in range(spec.super_classes)}


def gen_hierarchy(spec: HierarchyTaskSpec = HierarchyTaskSpec(), seed: int = 2020) -> TaskData:
    """Two-level taxonomy of ``super_classes x sub_classes`` Gaussian
    clusters: sub-class centres scatter around their super-class centre.
    Every super-class label is available for training, sub-class labels only
    for ``labelled_per_class`` samples of each sub-class.
    """
    rng = np.random.default_rng(seed)
    k, m = spec.super_classes, spec.sub_classes
    supers = rng.normal(size=(k, spec.dim))
    supers = spec.super_margin * supers / np.linalg.norm(supers, axis=1, keepdims=True)
    offsets = rng.normal(size=(k, m, spec.dim))
    offsets = spec.sub_margin * offsets / np.linalg.norm(offsets, axis=2, keepdims=True)
    centers = (supers[:, None, :] + offsets).reshape(k * m, spec.dim)

    def sample(per_class):
        sub = np.repeat(np.arange(k * m), per_class)
        return centers[sub] + rng.normal(size=(sub.size, spec.dim)), sub

    train_inputs, train_sub = sample(spec.train_per_class)
    test_inputs, test_sub = sample(spec.test_per_class)

    labelled = np.zeros(train_sub.size, dtype=bool)
    labelled[stratified_labelled_indices(train_sub, spec.labelled_per_class, seed)] = True
    train = Dataset(train_inputs, {'sub': train_sub, 'super': train_sub // m},
                    {'sub': labelled, 'super': np.ones(train_sub.size, dtype=bool)},
                    _singleton_groups(train_sub.size))
    test = Dataset(test_inputs, {'sub': test_sub, 'super': test_sub // m}, {},
                   _singleton_groups(test_sub.size))

    taxonomy = hierarchy_taxonomy(spec)
    predicates = {}
    for s, (super_name, classes) in enumerate(taxonomy.items()):
        predicates['SC_' + super_name] = ('super', s)
        for j, name in enumerate(classes):
            predicates['C_' + name] = ('sub', s * m + j)
    return TaskData('hierarchy', train, test, (('sub', k * m), ('super', k)), predicates,
                    logic.hierarchy_kb(taxonomy))


# MNIST IDX files
# -----------------------------------------------------------------------------

def _read_bytes(path: str) -> bytes:
    opener = gzip.open if path.endswith('.gz') else open
    with opener(path, 'rb') as f:
        return f.read()


def _idx_payload(data: bytes, magic: int, ndim: int, path: str) -> Tuple[Tuple[int, ...], bytes]:
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError('{0}: truncated IDX header'.format(path))
    found = struct.unpack('>I', data[:4])[0]
    if found != magic:
        raise FormatError('{0}: bad IDX magic 0x{1:08x}, expected 0x{2:08x}'.format(
            path, found, magic))
    dims = struct.unpack('>' + 'I' * ndim, data[4:header])
    size = int(np.prod(dims))
    if len(data) - header < size:
        raise FormatError('{0}: truncated IDX payload, {1:d} of {2:d} bytes'.format(
            path, len(data) - header, size))
    return dims, data[header:header + size]


def ingest_mnist_idx(images_path: str, labels_path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Reads an IDX image file and its label file (optionally gzipped).

    :return: ``(images, labels)``: ``(n, rows * cols)`` floats in [0, 1]
        and ``(n,)`` integer labels.
    :raises FormatError: On bad magic numbers, truncated files or differing
        image and label counts.
    """
    (count, rows, cols), pixels = _idx_payload(_read_bytes(images_path), IDX_IMAGES_MAGIC, 3,
                                               images_path)
    (label_count,), labels = _idx_payload(_read_bytes(labels_path), IDX_LABELS_MAGIC, 1,
                                          labels_path)
    if count != label_count:
        raise FormatError('{0:d} images but {1:d} labels'.format(count, label_count))
    images = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols) / 255.0
    return images.astype(np.float64), np.frombuffer(labels, dtype=np.uint8).astype(np.int64)


def load_mnist(directory: str, split: str = 'train') -> Tuple[np.ndarray, np.ndarray]:
    """Loads ``{split}-images-idx3-ubyte`` and ``{split}-labels-idx1-ubyte``
    from ``directory``, gzipped or not."""
    def find(stem):
        for name in (stem, stem + '.gz'):
            path = os.path.join(directory, name)
            if os.path.exists(path):
                return path
        raise FileNotFoundError('{0} not found in {1}'.format(stem, directory))

    return ingest_mnist_idx(find('{0}-images-idx3-ubyte'.format(split)),
                            find('{0}-labels-idx1-ubyte'.format(split)))
