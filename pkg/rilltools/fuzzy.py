"""Fuzzy evaluation of rules.

A rule's *logic likelihood* is computed bottom-up on an autodiff tape: atoms
read their value from a :class:`Valuation`, ``!`` is ``1 - s``, ``->`` is the
chosen :class:`FuzzyOperator`, ``forall`` takes the mean and ``exists`` the
minimum over the groundings of its variable. ``&``, ``|`` and ``<->`` are
first rewritten with ``!`` and ``->`` (see :func:`rilltools.logic.normalize_core`).
"""
import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Mapping, NamedTuple, Sequence, Tuple

import numpy as np

from rilltools import autodiff, logic
from rilltools.autodiff import DiffScalar, Tape, Var
from rilltools.errors import DomainError, MissingAtomError, ShapeError
from rilltools.logic import Atom, AtomRef, Constant, Exists, Forall, Formula, Implies, Not

#: Slack allowed on the [0, 1] range checks for float rounding
RANGE_TOLERANCE = 1e-9


def _check_unit(name: str, value: Var) -> None:
    v = value.value
    if np.any(v < -RANGE_TOLERANCE) or np.any(v > 1.0 + RANGE_TOLERANCE):
        raise DomainError('{0} must lie in [0, 1], given: {1!r}'.format(name, v))


class FuzzyOperator(object):
    """A differentiable implication ``I: [0, 1]^2 -> [0, 1]``. Calling the
    operator records it on the tape of its arguments.
    """
    name = None

    def __call__(self, x: DiffScalar, y: DiffScalar) -> DiffScalar:
        _check_unit('Premise', x)
        _check_unit('Consequent', y)
        return self.apply(x, y)

    def apply(self, x: DiffScalar, y: DiffScalar) -> DiffScalar:
        raise NotImplementedError

    def __repr__(self):
        return '{0}()'.format(type(self).__name__)

    def __eq__(self, other):
        return type(self) is type(other) and vars(self) == vars(other)

    def __hash__(self):
        return hash((type(self).__name__,) + tuple(sorted(vars(self).items())))


class Reichenbach(FuzzyOperator):
    """``I(x, y) = 1 - x + x * y``"""
    name = 'reichenbach'

    def apply(self, x, y):
        return 1.0 - x + x * y


class Lukasiewicz(FuzzyOperator):
    """``I(x, y) = min(1 - x + y, 1)``"""
    name = 'lukasiewicz'

    def apply(self, x, y):
        return autodiff.minimum(1.0 - x + y, 1.0)


class Sigmoidal(FuzzyOperator):
    """Reichenbach implication smoothed by a sigmoid and rescaled so that
    ``0`` and ``1`` stay fixed::

        σ_I(I) = d * (h * sigmoid(s * (I + b0)) - 1)
        h = 1 + exp(-s * b0)
        d = (1 + exp(-s * (1 + b0))) / (exp(-b0 * s) - exp(-s * (1 + b0)))

    :param s: Steepness, positive.
    :param b0: Shift; ``-0.5`` centres the sigmoid on the unit interval.
    """
    name = 'sigmoidal'

    def __init__(self, s: float = 8.0, b0: float = -0.5):
        if not s > 0:
            raise ValueError('Sigmoidal steepness must be positive, given: {0!r}'.format(s))
        self.s = float(s)
        self.b0 = float(b0)

    @property
    def h(self) -> float:
        return 1.0 + math.exp(-self.s * self.b0)

    @property
    def d(self) -> float:
        upper = math.exp(-self.s * (1.0 + self.b0))
        return (1.0 + upper) / (math.exp(-self.b0 * self.s) - upper)

    def smooth(self, i: DiffScalar) -> DiffScalar:
        tape = i.tape
        z = autodiff.sigmoid(tape.record('scale', i + self.b0, factor=self.s))
        return tape.record('scale', tape.record('scale', z, factor=self.h) - 1.0, factor=self.d)

    def apply(self, x, y):
        return self.smooth(1.0 - x + x * y)

    def __repr__(self):
        return 'Sigmoidal(s={0!r}, b0={1!r})'.format(self.s, self.b0)


OPERATORS = {op.name: op for op in (Reichenbach, Lukasiewicz, Sigmoidal)}


def make_operator(name: str, s: float = 8.0, b0: float = -0.5) -> FuzzyOperator:
    """Builds an operator by its config name: ``reichenbach``,
    ``lukasiewicz`` or ``sigmoidal`` (the only one using ``s`` and ``b0``).
    """
    try:
        cls = OPERATORS[name.lower()]
    except KeyError:
        raise ValueError('Unknown operator: {0!r}, expected one of {1}'.format(
            name, ', '.join(OPERATORS)))
    if cls is Sigmoidal:
        return Sigmoidal(s, b0)
    return cls()


def implication_likelihood(op: FuzzyOperator, x: DiffScalar, y: DiffScalar) -> DiffScalar:
    return op(x, y)


@dataclass
class Valuation(object):
    """Truth degrees of ground atoms, ``dict(f(x))`` of a model's outputs.

    Values are tape Vars, either 0-d or one entry per sample of a batch; all
    Vars of one valuation share a tape and a shape.

    :param values: Ground atom → degree in [0, 1].
    :param domain: Constants every quantified variable ranges over unless
        it has its own entry in ``bindings``.
    :param bindings: Variable name → constants it ranges over, used for
        per-slot grounding (``x1`` over slot 1 only and so on).
    """
    values: Mapping[Atom, Var]
    domain: Tuple[Constant, ...] = ()
    bindings: Mapping[str, Tuple[Constant, ...]] = field(default_factory=dict)

    def __post_init__(self):
        for atom_, value in self.values.items():
            if not isinstance(value, Var):
                raise TypeError('Valuation values must be tape Vars, given: {0}.'.format(
                    type(value)))
            _check_unit('Valuation of {0}'.format(atom_), value)
        self.domain = tuple(self.domain)
        self.bindings = {k: tuple(v) for k, v in self.bindings.items()}

    def __getitem__(self, atom_: Atom) -> Var:
        try:
            return self.values[atom_]
        except KeyError:
            raise MissingAtomError('No valuation for atom {0}'.format(atom_))

    def __contains__(self, atom_: Atom) -> bool:
        return atom_ in self.values

    def __len__(self) -> int:
        return len(self.values)

    @property
    def tape(self) -> Tape:
        return next(iter(self.values.values())).tape

    def constants_for(self, var: str) -> Tuple[Constant, ...]:
        constants = self.bindings.get(var, self.domain)
        if not constants:
            raise ShapeError('Empty grounding domain for variable {0!r}'.format(var))
        return constants


@lru_cache(maxsize=4096)
def _core(f: Formula) -> Formula:
    return f if logic.is_core(f) else logic.normalize_core(f)


@lru_cache(maxsize=65536)
def _instances(body: Formula, var: str, constants: Tuple[Constant, ...]) -> Tuple[Formula, ...]:
    return tuple(logic.substitute(body, {var: c}) for c in constants)


def _likelihood(op: FuzzyOperator, f: Formula, v: Valuation) -> DiffScalar:
    if isinstance(f, AtomRef):
        if not f.atom.is_ground:
            raise ShapeError('Atom {0} is not ground'.format(f.atom))
        return v[f.atom]
    elif isinstance(f, Not):
        return 1.0 - _likelihood(op, f.body, v)
    elif isinstance(f, Implies):
        return op(_likelihood(op, f.left, v), _likelihood(op, f.right, v))
    elif isinstance(f, (Forall, Exists)):
        values = [_likelihood(op, g, v) for g in _instances(f.body, f.var, v.constants_for(f.var))]
        if isinstance(f, Forall):
            return autodiff.stack_mean(values)
        return autodiff.stack_min(values)
    raise TypeError('Not a core formula: {0!r}'.format(f))


def logic_likelihood(op: FuzzyOperator, f: Formula, v: Valuation) -> DiffScalar:
    """Degree ``s(f, v)`` to which the valuation satisfies the formula.

      >>> tape = Tape()
      >>> p, q = logic.Atom('P'), logic.Atom('Q')
      >>> v = Valuation({p: tape.variable(0.3), q: tape.variable(0.6)})
      >>> logic_likelihood(Reichenbach(), Implies(AtomRef(p), AtomRef(q)), v).item()
      0.88

    :param op: Implication operator.
    :param f: Any formula; non-core connectives are rewritten first.
    :param v: Valuation covering every ground atom of the grounded formula.
    :return: Likelihood in [0, 1], with the shape of the valuation's values.
    :raises MissingAtomError: If an atom has no valuation.
    """
    return _likelihood(op, _core(f), v)


# Diagnostics
# -----------------------------------------------------------------------------

class ScanRow(NamedTuple):
    x: float
    y: float
    I: float
    dI_dx: float
    dI_dy: float


@dataclass
class ConfidenceReport(object):
    strict: bool
    violating_points: List[Tuple[float, float]]


@dataclass
class BiasReport(object):
    max_strict_delta: float
    #: δ → fraction of grid points in (0, δ)^2 where ∂I/∂x < 0
    biased_fraction: Dict[float, float]


def _partials(op: FuzzyOperator, xs: np.ndarray, ys: np.ndarray) -> Tuple[np.ndarray, ...]:
    # every output element depends on its own (x, y) pair only, so the
    # gradient of the sum is the elementwise partial derivative
    tape = Tape()
    x, y = tape.variable(xs), tape.variable(ys)
    out = op(x, y)
    dx, dy = tape.gradient(autodiff.total(out), [x, y])
    return out.value, dx, dy


def _check_grid(grid: int) -> None:
    if grid < 10:
        raise ValueError('Grid resolution must be at least 10, given: {0!r}'.format(grid))


def operator_scan(op: FuzzyOperator, grid: int = 21) -> List[ScanRow]:
    """Value and partial derivatives of ``op`` on a ``grid x grid`` lattice
    over the closed unit square."""
    _check_grid(grid)
    xs, ys = np.meshgrid(np.linspace(0.0, 1.0, grid), np.linspace(0.0, 1.0, grid), indexing='ij')
    values, dx, dy = _partials(op, xs.ravel(), ys.ravel())
    return [ScanRow(*map(float, row)) for row in zip(xs.ravel(), ys.ravel(), values, dx, dy)]


def write_operator_scan(path: str, rows: Sequence[ScanRow]) -> None:
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(ScanRow._fields)
        writer.writerows(rows)


def check_confidence_monotonic(op: FuzzyOperator, delta: float = 1.0,
                               grid: int = 101) -> ConfidenceReport:
    """Checks on a lattice that ``I(., y)`` strictly decreases for
    ``y in [0, δ)`` and ``I(x, .)`` strictly increases for ``x in (1-δ, 1]``.
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError('delta must be in (0, 1], given: {0!r}'.format(delta))
    _check_grid(grid)
    axis = np.linspace(0.0, 1.0, grid)
    xs, ys = (a.ravel() for a in np.meshgrid(axis, axis, indexing='ij'))
    _, dx, dy = _partials(op, xs, ys)

    decreasing = (ys < delta) & ~(dx < 0)
    increasing = (xs > 1.0 - delta) & ~(dy > 0)
    bad = decreasing | increasing
    points = [(float(x), float(y)) for x, y in zip(xs[bad], ys[bad])]
    return ConfidenceReport(strict=not points, violating_points=points)


def check_implication_biased(op: FuzzyOperator, grid: int = 200) -> BiasReport:
    """Measures where ``∂I/∂x < 0`` holds on ``(0, δ)^2``.

    The lattice holds the interior points ``k / grid``; ``max_strict_delta`` is
    the largest ``δ = k / grid`` whose square has negative ``∂I/∂x`` at every
    point, and ``biased_fraction[δ]`` the share of its points that do.
    """
    _check_grid(grid)
    axis = np.arange(1, grid) / grid
    xs, ys = (a.ravel() for a in np.meshgrid(axis, axis, indexing='ij'))
    _, dx, _ = _partials(op, xs, ys)
    negative = dx < 0

    max_strict, curve, strict = 0.0, {}, True
    for k in range(2, grid + 1):
        delta = k / grid
        inside = (xs < delta) & (ys < delta)
        fraction = float(negative[inside].mean())
        curve[delta] = fraction
        strict = strict and fraction == 1.0
        if strict:
            max_strict = delta
    return BiasReport(max_strict_delta=max_strict, biased_fraction=curve)
